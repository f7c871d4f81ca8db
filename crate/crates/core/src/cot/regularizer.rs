use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ceiling applied to the argument of `exp` in the entropic conjugate.
pub const EXP_CLIP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    /// `φ(x) = x log x - x`, `φ*(u) = exp(u)`.
    Entropy,
    /// `φ(x) = x² + i_{ℝ⁺}(x)`, `φ*(u) = max(u, 0)² / 4`.
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    pub kind: RegKind,
    /// Regularization strength λ.
    pub strength: f64,
    /// Use `α = u / 2` for L2 (no positive part) instead of the exact
    /// derivative `max(u, 0) / 2`. Only for comparison runs.
    #[serde(default)]
    pub literal_l2_derivative: bool,
}

impl Regularizer {
    pub fn new(kind: RegKind, strength: f64) -> Result<Self> {
        let r = Self {
            kind,
            strength,
            literal_l2_derivative: false,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn entropy(strength: f64) -> Self {
        Self {
            kind: RegKind::Entropy,
            strength,
            literal_l2_derivative: false,
        }
    }

    pub fn l2(strength: f64) -> Self {
        Self {
            kind: RegKind::L2,
            strength,
            literal_l2_derivative: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strength > 0.0) || !self.strength.is_finite() {
            return Err(Error::Parameter(format!(
                "regularization strength {} must be positive",
                self.strength
            )));
        }
        Ok(())
    }

    /// `φ*` evaluated at the scaled argument `u`.
    pub fn conjugate_at(&self, u: f64) -> f64 {
        match self.kind {
            RegKind::Entropy => u.min(EXP_CLIP).exp(),
            RegKind::L2 => {
                let p = u.max(0.0);
                p * p / 4.0
            }
        }
    }

    /// `φ*'` evaluated at the scaled argument `u`; this is `α`.
    pub fn conjugate_slope_at(&self, u: f64) -> f64 {
        match self.kind {
            RegKind::Entropy => u.min(EXP_CLIP).exp(),
            RegKind::L2 if self.literal_l2_derivative => u / 2.0,
            RegKind::L2 => u.max(0.0) / 2.0,
        }
    }

    /// Scaled argument `(pot_sum - cost) / λ`.
    pub fn scaled(&self, pot_sum: f64, cost: f64) -> f64 {
        (pot_sum - cost) / self.strength
    }

    pub fn clips(&self, u: f64) -> bool {
        self.kind == RegKind::Entropy && u > EXP_CLIP
    }
}

/// Legendre conjugate `φ*(u)`.
pub fn conjugate(reg: &Regularizer, u: f64) -> f64 {
    reg.conjugate_at(u)
}

/// `α = φ*'((pot_sum - cost) / λ)`, the coupling density weight of a pair.
pub fn alpha(reg: &Regularizer, pot_sum: f64, cost: f64) -> f64 {
    reg.conjugate_slope_at(reg.scaled(pot_sum, cost))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conjugate_values() {
        assert_eq!(conjugate(&Regularizer::entropy(1.0), 0.0), 1.0);
        assert_eq!(conjugate(&Regularizer::l2(1.0), -3.0), 0.0);
        assert_eq!(conjugate(&Regularizer::l2(1.0), 2.0), 1.0);
        assert_eq!(conjugate(&Regularizer::entropy(1.0), 1e6), EXP_CLIP.exp());
    }

    #[test]
    fn alpha_values() {
        assert_eq!(alpha(&Regularizer::entropy(0.3), 0.7, 0.7), 1.0);
        assert_eq!(alpha(&Regularizer::l2(0.3), 0.1, 0.7), 0.0);
        assert!((alpha(&Regularizer::entropy(1.0), 1.0, 0.0) - std::f64::consts::E).abs() < 1e-15);
        let mut lit = Regularizer::l2(0.5);
        lit.literal_l2_derivative = true;
        assert_eq!(alpha(&lit, 0.0, 1.0), -1.0);
    }

    #[test]
    fn entropy_alpha_equals_conjugate() {
        let r = Regularizer::entropy(0.05);
        for (p, c) in [(0.1, 0.3), (0.9, 0.2), (-0.4, 0.0), (0.0, 1.0)] {
            assert_eq!(alpha(&r, p, c), conjugate(&r, r.scaled(p, c)));
        }
    }

    #[test]
    fn alpha_is_slope_of_conjugate() {
        for r in [Regularizer::entropy(0.2), Regularizer::l2(0.2)] {
            for u in [-2.0, -0.3, 0.4, 1.7, 5.0] {
                let h = 1e-6;
                let fd = (conjugate(&r, u + h) - conjugate(&r, u - h)) / (2.0 * h);
                let a = r.conjugate_slope_at(u);
                assert!((fd - a).abs() <= 1e-6 * a.abs().max(1.0), "{r:?} u={u}");
            }
        }
    }

    #[test]
    fn strength_must_be_positive() {
        assert!(Regularizer::new(RegKind::Entropy, 0.0).is_err());
        assert!(Regularizer::new(RegKind::L2, -1.0).is_err());
        assert!(Regularizer::new(RegKind::L2, 0.1).is_ok());
    }
}
