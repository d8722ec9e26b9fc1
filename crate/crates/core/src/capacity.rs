//! Log covering numbers of Euclidean balls and of the factor class.
//! Everything stays in the log domain; the raw numbers overflow quickly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringQuery {
    pub r_theta: f64,
    pub nu: f64,
    pub n: usize,
    pub width: usize,
    /// `L_phi / gamma`.
    pub lipschitz_ratio: f64,
}

impl CoveringQuery {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("r_theta", self.r_theta), ("nu", self.nu), ("lipschitz ratio", self.lipschitz_ratio)] {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n == 0 || self.width == 0 {
            return Err(Error::Argument("dimension and width must be at least 1".into()));
        }
        Ok(())
    }
}

/// `n log(1 + 2r/nu)`, the log of the volumetric covering bound of an `r`-ball in `R^n`.
pub fn ball_covering_log(r: f64, nu: f64, n: usize) -> f64 {
    let ratio = 2.0 * r / nu;
    let log = if ratio.is_finite() { ratio.ln_1p() } else { 2f64.ln() + r.ln() - nu.ln() };
    n as f64 * log
}

/// `R * ball_covering_log(r_theta, (L_phi / gamma) nu, n)`.
pub fn class_covering_log(q: &CoveringQuery) -> Result<f64> {
    q.validate()?;
    Ok(q.width as f64 * ball_covering_log(q.r_theta, q.lipschitz_ratio * q.nu, q.n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn examples() {
        assert_relative_eq!(ball_covering_log(1.0, 2.0, 3), 3.0 * 2f64.ln(), max_relative = 1e-15);
        assert!(ball_covering_log(1.0, 1e300, 3) < 1e-290);
        assert_relative_eq!(ball_covering_log(0.7, 0.3, 8), 2.0 * ball_covering_log(0.7, 0.3, 4), max_relative = 1e-15);
    }

    #[test]
    fn class_reduces_and_scales() {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let q = CoveringQuery { r_theta: r, nu: 0.5, n: 5, width: 1, lipschitz_ratio: 0.25 };
        assert_eq!(class_covering_log(&q).unwrap(), ball_covering_log(r, 0.125, 5));
        // Inner log equal to one: 1 + 2 r / nu' = e.
        let nu_inner = 2.0 * r / (std::f64::consts::E - 1.0);
        let q = CoveringQuery { r_theta: r, nu: nu_inner, n: 6, width: 2, lipschitz_ratio: 1.0 };
        assert_relative_eq!(class_covering_log(&q).unwrap(), 12.0, max_relative = 1e-14);
        let coarse = CoveringQuery { nu: 2.0 * nu_inner, ..q };
        assert!(class_covering_log(&coarse).unwrap() < class_covering_log(&q).unwrap());
    }
}
