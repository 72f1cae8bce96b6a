//! Discovery of mesoscale stochastic differential equations for the
//! polarization dynamics of collective motion.
//!
//! The pipeline runs in stages, each backed by one module:
//!
//! 1. [`abm`] simulates a mean-field flocking model (spontaneous turns,
//!    pairwise and ternary copying) with the exact stochastic simulation
//!    algorithm.
//! 2. [`order_parameter`] turns heading or velocity trajectories into a
//!    polarization series `m(t)` and builds the rotated/flipped training set.
//! 3. [`estimator`] fits a drift network `f(m)` and a diffusion network
//!    yielding `G(m) = g(m) g(m)ᵀ` by maximising the Euler transition
//!    likelihood, using the small network engine in [`neural_net`].
//! 4. [`sde_simulate`] integrates fitted or closed-form ([`analytic_sde`])
//!    models with Euler–Maruyama, and [`metrics`] compares the result with
//!    the data (W1 distance, relative autocorrelation time).
//! 5. [`fields`] evaluates a model on a grid over the unit disc and renders
//!    drift arrows and diffusion ellipses.
//!
//! Data-parallel loops (replicates, batch gradients, grid evaluation) go
//! through [`Execution`]; with the `parallel` feature disabled every path
//! runs sequentially and produces bit-identical results.

pub mod abm;
pub mod analytic_sde;
mod error;
pub mod estimator;
pub mod fields;
pub mod linalg;
pub mod metrics;
pub mod neural_net;
pub mod order_parameter;
mod par;
pub mod rng;
pub mod sde_simulate;

pub use error::{Error, Result};
pub use linalg::{Mat2, Vec2};
pub use par::Execution;

/// A drift/diffusion pair that can be evaluated pointwise.
///
/// Implemented by fitted [`estimator::SdeModel`]s and by the closed-form
/// [`analytic_sde::AnalyticSde`].
pub trait DriftDiffusion {
    fn drift(&self, m: Vec2) -> Vec2;
    /// Covariance `G(m)`, symmetric positive semi-definite.
    fn cov(&self, m: Vec2) -> Mat2;
}
