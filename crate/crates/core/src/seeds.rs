use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser; turns `(base, stream)` into an independent seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from(base: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}

// Stream tags keep independent uses of one base seed apart.
pub(crate) const STREAM_SPLIT: u64 = 1;
pub(crate) const STREAM_RESAMPLE: u64 = 2;
pub(crate) const STREAM_SOLVER: u64 = 3;
pub(crate) const STREAM_RFF: u64 = 4;
pub(crate) const STREAM_SUBSAMPLE: u64 = 5;
pub(crate) const STREAM_SCHEDULE: u64 = 6;
pub(crate) const STREAM_SYNTHETIC: u64 = 7;
