//! Closed-form mean-field SDEs for the polarization of the flocking model.
//!
//! Pairwise copying only:
//!
//! ```text
//! f(m) = -r1 m
//! G(m) = (r1 + r2 (1 - |m|²)) / N · I
//! ```
//!
//! With ternary copying added:
//!
//! ```text
//! f(m) = -r1 m + r3 (1 - |m|²) m
//! G(m) = (r1 + (r2 + r3)(1 - |m|²)) / N · I
//! ```

use crate::abm::ModelParams;
use crate::linalg::{self, Mat2, Vec2};
use crate::order_parameter::DISC_TOLERANCE;
use crate::{DriftDiffusion, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interaction {
    Pairwise,
    Ternary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticSde {
    pub kind: Interaction,
    pub params: ModelParams,
}

impl AnalyticSde {
    pub fn new(kind: Interaction, params: ModelParams) -> Result<Self> {
        params.validate()?;
        if kind == Interaction::Ternary && params.r3 <= 0.0 {
            return Err(Error::InvalidParameter(
                "the ternary form needs r3 > 0".into(),
            ));
        }
        Ok(AnalyticSde { kind, params })
    }

    pub fn pairwise(n_agents: usize, r1: f64, r2: f64) -> Result<Self> {
        Self::new(Interaction::Pairwise, ModelParams::new(n_agents, r1, r2, 0.0)?)
    }

    pub fn ternary(n_agents: usize, r1: f64, r2: f64, r3: f64) -> Result<Self> {
        Self::new(Interaction::Ternary, ModelParams::new(n_agents, r1, r2, r3)?)
    }

    fn check(m: Vec2) -> Result<f64> {
        let norm = linalg::norm(m);
        if !norm.is_finite() || norm > 1.0 + DISC_TOLERANCE {
            return Err(Error::OutsideDisc { norm });
        }
        Ok(norm * norm)
    }

    pub fn drift(&self, m: Vec2) -> Result<Vec2> {
        Ok(self.drift_unchecked(m, Self::check(m)?))
    }

    pub fn diffusion_cov(&self, m: Vec2) -> Result<Mat2> {
        Ok(self.cov_unchecked(Self::check(m)?))
    }

    fn drift_unchecked(&self, m: Vec2, m2: f64) -> Vec2 {
        let p = &self.params;
        let k = match self.kind {
            Interaction::Pairwise => -p.r1,
            Interaction::Ternary => -p.r1 + p.r3 * (1.0 - m2),
        };
        linalg::scale(m, k)
    }

    fn cov_unchecked(&self, m2: f64) -> Mat2 {
        let p = &self.params;
        let copy = match self.kind {
            Interaction::Pairwise => p.r2,
            Interaction::Ternary => p.r2 + p.r3,
        };
        let s = (p.r1 + copy * (1.0 - m2)) / p.n_agents as f64;
        [[s, 0.0], [0.0, s]]
    }

    /// Radius of the ring of stable fixed points, `sqrt(1 - r1/r3)`, when
    /// `r3 > r1`.
    pub fn ring_radius(&self) -> Option<f64> {
        let p = &self.params;
        (self.kind == Interaction::Ternary && p.r3 > p.r1).then(|| (1.0 - p.r1 / p.r3).sqrt())
    }
}

/// Evaluation outside the disc uses the formulas unchanged; callers that
/// need the range check use the inherent methods.
impl DriftDiffusion for AnalyticSde {
    fn drift(&self, m: Vec2) -> Vec2 {
        self.drift_unchecked(m, linalg::dot(m, m))
    }

    fn cov(&self, m: Vec2) -> Mat2 {
        self.cov_unchecked(linalg::dot(m, m))
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn pairwise_examples() {
        let sde = AnalyticSde::pairwise(30, 1.0, 1.0).unwrap();
        assert_eq!(sde.drift([0.0, 0.0]).unwrap(), [0.0, 0.0]);
        assert_eq!(sde.drift([0.5, 0.0]).unwrap(), [-0.5, 0.0]);
        let g = sde.diffusion_cov([0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(g[0][0], 2.0 / 30.0, epsilon = 1e-15);
        assert_eq!(g[0][1], 0.0);
        let g = sde.diffusion_cov([0.6, 0.8]).unwrap();
        assert_abs_diff_eq!(g[1][1], 1.0 / 30.0, epsilon = 1e-15);
    }

    #[test]
    fn ternary_examples() {
        let sde = AnalyticSde::ternary(30, 1.0, 0.0, 2.0).unwrap();
        let r = sde.ring_radius().unwrap();
        assert_abs_diff_eq!(r, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        let f = sde.drift([r, 0.0]).unwrap();
        assert_abs_diff_eq!(f[0], 0.0, epsilon = 1e-15);
        // outward inside the ring, inward outside
        assert!(sde.drift([0.3, 0.0]).unwrap()[0] > 0.0);
        assert!(sde.drift([0.0, 0.9]).unwrap()[1] < 0.0);
        let g = sde.diffusion_cov([0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(g[0][0], 3.0 / 30.0, epsilon = 1e-15);
        assert!(AnalyticSde::ternary(30, 1.0, 1.0, 0.0).is_err());
        assert_eq!(AnalyticSde::ternary(30, 2.0, 0.0, 1.0).unwrap().ring_radius(), None);
    }

    #[test]
    fn rejects_points_outside_disc() {
        let sde = AnalyticSde::pairwise(30, 1.0, 1.0).unwrap();
        assert!(matches!(sde.drift([1.0, 0.1]), Err(Error::OutsideDisc { .. })));
        assert!(sde.diffusion_cov([f64::NAN, 0.0]).is_err());
        assert!(sde.drift([1.0, 0.0]).is_ok());
    }

    #[test]
    fn diffusion_scales_as_inverse_population() {
        let m = [0.3, -0.2];
        let a = AnalyticSde::ternary(15, 1.0, 0.5, 2.0).unwrap().diffusion_cov(m).unwrap();
        let b = AnalyticSde::ternary(60, 1.0, 0.5, 2.0).unwrap().diffusion_cov(m).unwrap();
        assert_abs_diff_eq!(a[0][0] / b[0][0], 4.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn rotation_equivariance(r in 0.0..1.0f64, phi in -3.2..3.2f64, alpha in -3.2..3.2f64, ternary: bool) {
            let sde = if ternary {
                AnalyticSde::ternary(30, 1.0, 0.5, 2.0).unwrap()
            } else {
                AnalyticSde::pairwise(30, 1.0, 1.0).unwrap()
            };
            let m = [r * phi.cos(), r * phi.sin()];
            let rot = linalg::rotation(alpha);
            let rm = linalg::mat_vec(&rot, m);
            let f_rot = linalg::mat_vec(&rot, sde.drift(m).unwrap());
            let f_at = sde.drift(rm).unwrap();
            prop_assert!((f_rot[0] - f_at[0]).abs() < 1e-12 && (f_rot[1] - f_at[1]).abs() < 1e-12);
            let g = sde.diffusion_cov(m).unwrap();
            let g_rot = linalg::mat_mul(&linalg::mat_mul(&rot, &g), &linalg::transpose(&rot));
            let g_at = sde.diffusion_cov(rm).unwrap();
            for i in 0..2 { for j in 0..2 {
                prop_assert!((g_rot[i][j] - g_at[i][j]).abs() < 1e-12);
            }}
        }
    }
}
