//! Random Fourier features and the dual potentials built on them.
//!
//! Frequencies are drawn as `ω ~ N(0, 2/σ²)` and phases as `b ~ U[0, 2π]`,
//! so `ψ(x)ᵀψ(x')` approximates `exp(-(x - x')² / σ²)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// Kernel the feature inner products approximate in expectation.
pub fn implied_kernel(x: f64, y: f64, sigma2: f64) -> f64 {
    (-(x - y).powi(2) / sigma2).exp()
}

/// Frozen random Fourier feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffMap {
    omegas: Vec<f64>,
    phases: Vec<f64>,
    sigma2: f64,
    seed: Option<u64>,
}

impl RffMap {
    /// Builds a map from explicit frequencies and phases.
    pub fn from_parts(omegas: Vec<f64>, phases: Vec<f64>, sigma2: f64) -> Result<Self> {
        if omegas.is_empty() || omegas.len() != phases.len() {
            return Err(Error::Parameter(format!(
                "need matching non-empty frequencies and phases, got {} and {}",
                omegas.len(),
                phases.len()
            )));
        }
        if !(sigma2 > 0.0) {
            return Err(Error::Parameter(format!("kernel variance {sigma2} must be positive")));
        }
        Ok(Self {
            omegas,
            phases,
            sigma2,
            seed: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.omegas.len()
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    fn scale(&self) -> f64 {
        (2.0 / self.dim() as f64).sqrt()
    }

    pub fn features_into(&self, x: f64, out: &mut [f64]) {
        let c = self.scale();
        for ((o, &w), &b) in out.iter_mut().zip(&self.omegas).zip(&self.phases) {
            *o = c * (w * x + b).cos();
        }
    }

    /// `d/dx ψ(x)`, entry-wise `-√(2/D) ωⁱ sin(ωⁱx + bⁱ)`.
    pub fn feature_slopes_into(&self, x: f64, out: &mut [f64]) {
        let c = self.scale();
        for ((o, &w), &b) in out.iter_mut().zip(&self.omegas).zip(&self.phases) {
            *o = -c * w * (w * x + b).sin();
        }
    }
}

pub fn make_rff(d: usize, sigma2: f64, seed: u64) -> Result<RffMap> {
    if d == 0 {
        return Err(Error::Parameter("feature count must be at least 1".into()));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::Parameter(format!("kernel variance {sigma2} must be positive")));
    }
    let mut rng = seeds::rng_from(seed, seeds::STREAM_RFF);
    let normal = Normal::new(0.0, (2.0 / sigma2).sqrt())
        .map_err(|e| Error::Parameter(e.to_string()))?;
    let omegas: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
    let phases: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    Ok(RffMap {
        omegas,
        phases,
        sigma2,
        seed: Some(seed),
    })
}

/// `ψ(x) = √(2/D) (cos(ω¹x + b¹), …, cos(ωᴰx + bᴰ))`.
pub fn eval_features(m: &RffMap, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; m.dim()];
    m.features_into(x, &mut out);
    out
}

/// A dual variable `λ(x) = cᵀψ(x)` over a shared feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotential {
    pub coeffs: Vec<f64>,
    map: Arc<RffMap>,
}

impl DualPotential {
    pub fn zeros(map: Arc<RffMap>) -> Self {
        Self {
            coeffs: vec![0.0; map.dim()],
            map,
        }
    }

    pub fn with_coeffs(map: Arc<RffMap>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != map.dim() {
            return Err(Error::Dimension {
                expected: map.dim(),
                got: coeffs.len(),
            });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Parameter("non-finite potential coefficient".into()));
        }
        Ok(Self { coeffs, map })
    }

    pub fn map(&self) -> &Arc<RffMap> {
        &self.map
    }

    pub fn shares_map(&self, other: &DualPotential) -> bool {
        Arc::ptr_eq(&self.map, &other.map) || *self.map == *other.map
    }
}

pub fn eval_potential(p: &DualPotential, x: f64) -> f64 {
    let m = &p.map;
    let c = m.scale();
    p.coeffs
        .iter()
        .zip(m.omegas.iter().zip(&m.phases))
        .map(|(&k, (&w, &b))| k * c * (w * x + b).cos())
        .sum()
}

/// Derivative of [`eval_potential`] with respect to its scalar input.
pub fn grad_potential_input(p: &DualPotential, x: f64) -> f64 {
    let m = &p.map;
    let c = m.scale();
    -c * p
        .coeffs
        .iter()
        .zip(m.omegas.iter().zip(&m.phases))
        .map(|(&k, (&w, &b))| k * w * (w * x + b).sin())
        .sum::<f64>()
}
