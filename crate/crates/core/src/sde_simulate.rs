//! Euler–Maruyama integration of two-dimensional SDEs
//! `dm = f(m) dt + g(m) dW` with `g gᵀ = G`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg::{self, Mat2, Vec2};
use crate::order_parameter::PolarizationSeries;
use crate::rng::{stream, stream_rng};
use crate::{DriftDiffusion, Error, Execution, Result};

/// States leaving the unit disc are pulled back to this radius.
pub const BOUNDARY_RADIUS: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Rescale any state with `|m| > 1` back onto the disc.
    Project,
    /// Integrate without constraint.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Output sampling interval.
    pub dt: f64,
    /// Output steps; the trajectory holds `n_steps + 1` samples.
    pub n_steps: usize,
    pub m0: Vec2,
    pub seed: u64,
    pub boundary: Boundary,
    /// Integration steps per output sample.
    pub substeps: usize,
}

impl SimConfig {
    pub fn new(dt: f64, n_steps: usize, m0: Vec2, seed: u64) -> Self {
        SimConfig {
            dt,
            n_steps,
            m0,
            seed,
            boundary: Boundary::Project,
            substeps: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidParameter("substeps must be at least 1".into()));
        }
        if !(self.m0[0].is_finite() && self.m0[1].is_finite()) {
            return Err(Error::NonFinite("initial state".into()));
        }
        Ok(())
    }
}

fn project(m: Vec2) -> Vec2 {
    let n = linalg::norm(m);
    if n > 1.0 {
        linalg::scale(m, BOUNDARY_RADIUS / n)
    } else {
        m
    }
}

/// Integrates with drift `f` and covariance `g_cov`, drawing noise from
/// replicate stream `index`.
pub fn euler_maruyama_indexed<F, G>(f: F, g_cov: G, cfg: &SimConfig, index: u64) -> Result<PolarizationSeries>
where
    F: Fn(Vec2) -> Vec2,
    G: Fn(Vec2) -> Mat2,
{
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, stream::SDE + index);
    let h = cfg.dt / cfg.substeps as f64;
    let sqrt_h = h.sqrt();
    let mut m = match cfg.boundary {
        Boundary::Project => project(cfg.m0),
        Boundary::Free => cfg.m0,
    };
    let mut out = Vec::with_capacity(cfg.n_steps + 1);
    out.push(m);
    for step in 1..=cfg.n_steps {
        for _ in 0..cfg.substeps {
            let drift = f(m);
            let l = linalg::cholesky(&g_cov(m));
            let xi: Vec2 = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let noise = linalg::mat_vec(&l, xi);
            m = [
                m[0] + drift[0] * h + noise[0] * sqrt_h,
                m[1] + drift[1] * h + noise[1] * sqrt_h,
            ];
            if !(m[0].is_finite() && m[1].is_finite()) {
                return Err(Error::NonFinite(format!("state at step {step}")));
            }
            if cfg.boundary == Boundary::Project {
                m = project(m);
            }
        }
        out.push(m);
    }
    PolarizationSeries::new(cfg.dt, out)
}

pub fn euler_maruyama<F, G>(f: F, g_cov: G, cfg: &SimConfig) -> Result<PolarizationSeries>
where
    F: Fn(Vec2) -> Vec2,
    G: Fn(Vec2) -> Mat2,
{
    euler_maruyama_indexed(f, g_cov, cfg, 0)
}

pub fn simulate_model<M: DriftDiffusion + ?Sized>(model: &M, cfg: &SimConfig) -> Result<PolarizationSeries> {
    euler_maruyama(|m| model.drift(m), |m| model.cov(m), cfg)
}

/// `count` independent trajectories; replicate `i` uses noise stream `i`.
pub fn simulate_ensemble<M: DriftDiffusion + Sync + ?Sized>(
    model: &M,
    cfg: &SimConfig,
    count: usize,
    exec: Execution,
) -> Result<Vec<PolarizationSeries>> {
    exec.map(count, |i| {
        euler_maruyama_indexed(|m| model.drift(m), |m| model.cov(m), cfg, i as u64)
    })
    .into_iter()
    .collect()
}
