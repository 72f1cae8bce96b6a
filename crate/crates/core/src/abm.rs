//! Mean-field flocking model simulated with the exact stochastic simulation
//! algorithm.
//!
//! Agents move at unit speed and are described by their heading alone. Each
//! agent independently, as a Poisson process:
//!
//! * turns to a uniformly random heading at rate `r1`,
//! * copies the heading of one other agent at rate `r2` (pairwise),
//! * adopts the direction of the mean unit vector of two other agents at
//!   rate `r3` (ternary).
//!
//! Interaction partners are drawn uniformly from the whole group without
//! replacement and never include the focal agent.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::linalg::wrap_angle;
use crate::rng::{self, stream};
use crate::{Error, Execution, Result, Vec2};

/// Default sampling interval of emitted trajectories (time units).
pub const DEFAULT_SAMPLE_DT: f64 = 0.12;
/// Default fraction of a run discarded as transient before fitting.
pub const DEFAULT_BURN_IN: f64 = 0.1;

/// Below this resultant length the ternary mean direction is undefined and
/// the focal agent keeps its heading.
const DEGENERATE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub n_agents: usize,
    /// Spontaneous-turn rate per agent.
    pub r1: f64,
    /// Pairwise-copy rate per agent.
    pub r2: f64,
    /// Ternary-copy rate per agent.
    pub r3: f64,
}

impl ModelParams {
    pub fn new(n_agents: usize, r1: f64, r2: f64, r3: f64) -> Result<Self> {
        let p = ModelParams { n_agents, r1, r2, r3 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::InvalidParameter(format!(
                "n_agents must be at least 2, got {}",
                self.n_agents
            )));
        }
        for (name, r) in [("r1", self.r1), ("r2", self.r2), ("r3", self.r3)] {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and non-negative, got {r}"
                )));
            }
        }
        if self.rate_sum() <= 0.0 {
            return Err(Error::InvalidParameter("all rates zero".into()));
        }
        if self.r3 > 0.0 && self.n_agents < 3 {
            return Err(Error::InvalidParameter(
                "ternary copying needs at least 3 agents".into(),
            ));
        }
        Ok(())
    }

    fn rate_sum(&self) -> f64 {
        self.r1 + self.r2 + self.r3
    }
}

/// Total event rate of the whole group, `N (r1 + r2 + r3)`.
pub fn total_event_rate(params: &ModelParams) -> f64 {
    params.n_agents as f64 * params.rate_sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadingState {
    /// Angles in `[-π, π)`.
    pub headings: Vec<f64>,
    pub time: f64,
}

impl HeadingState {
    pub fn aligned(n: usize, heading: f64) -> Self {
        HeadingState {
            headings: vec![wrap_angle(heading); n],
            time: 0.0,
        }
    }

    /// I.i.d. uniform headings at time zero.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        HeadingState {
            headings: (0..n).map(|_| rng.random_range(-PI..PI)).collect(),
            time: 0.0,
        }
    }

    /// Mean unit heading vector of the group.
    pub fn polarization(&self) -> Vec2 {
        let n = self.headings.len() as f64;
        let (sx, sy) = self.headings.iter().fold((0.0, 0.0), |(sx, sy), &th| {
            let (s, c) = th.sin_cos();
            (sx + c, sy + s)
        });
        [sx / n, sy / n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadingTrajectory {
    pub sample_dt: f64,
    /// Snapshot `k` is the state at time `k * sample_dt`.
    pub frames: Vec<HeadingState>,
}

impl HeadingTrajectory {
    /// Writes the `t,agent_id,theta` CSV, one row per agent per frame.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,agent_id,theta")?;
        for frame in &self.frames {
            for (id, th) in frame.headings.iter().enumerate() {
                writeln!(w, "{},{},{}", frame.time, id, th)?;
            }
        }
        w.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    SpontaneousTurn,
    PairwiseCopy,
    TernaryCopy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsaEvent {
    pub kind: EventKind,
    pub agent: usize,
    pub waiting_time: f64,
}

/// Advances `state` by one SSA event: draws the exponential waiting time,
/// picks the event type in proportion to its rate and applies it to a
/// uniformly chosen agent.
pub fn ssa_step<R: Rng + ?Sized>(
    state: &mut HeadingState,
    params: &ModelParams,
    rng: &mut R,
) -> SsaEvent {
    let waiting_time = draw_waiting_time(params, rng);
    let (kind, agent) = apply_event(&mut state.headings, params, rng);
    state.time += waiting_time;
    SsaEvent {
        kind,
        agent,
        waiting_time,
    }
}

fn draw_waiting_time<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / total_event_rate(params)
}

fn apply_event<R: Rng + ?Sized>(
    headings: &mut [f64],
    params: &ModelParams,
    rng: &mut R,
) -> (EventKind, usize) {
    let n = headings.len();
    let agent = rng.random_range(0..n);
    let u = rng.random::<f64>() * params.rate_sum();
    let kind = if u < params.r1 {
        headings[agent] = rng.random_range(-PI..PI);
        EventKind::SpontaneousTurn
    } else if u < params.r1 + params.r2 {
        let j = other_agent(agent, rng.random_range(0..n - 1));
        headings[agent] = headings[j];
        EventKind::PairwiseCopy
    } else {
        let a = rng.random_range(0..n - 1);
        let mut b = rng.random_range(0..n - 2);
        if b >= a {
            b += 1;
        }
        apply_ternary(headings, agent, other_agent(agent, a), other_agent(agent, b));
        EventKind::TernaryCopy
    };
    (kind, agent)
}

/// Maps an index over the `n - 1` agents other than `focal` to an agent id.
fn other_agent(focal: usize, idx: usize) -> usize {
    if idx >= focal {
        idx + 1
    } else {
        idx
    }
}

fn apply_ternary(headings: &mut [f64], focal: usize, j: usize, k: usize) {
    let (sj, cj) = headings[j].sin_cos();
    let (sk, ck) = headings[k].sin_cos();
    let (sx, sy) = (cj + ck, sj + sk);
    if sx.hypot(sy) >= DEGENERATE_FLOOR {
        headings[focal] = wrap_angle(sy.atan2(sx));
    }
}

/// Outcome counters of one sampled run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunSummary {
    pub events: u64,
    pub frames: usize,
    pub mean_polarization_norm: f64,
}

/// Runs the SSA from `state` (taken to start at time zero) and calls
/// `on_sample` with the state at every multiple of `sample_dt` up to `t_end`.
/// On return `state` holds the snapshot at the last sample time.
pub fn run_sampled<R, F>(
    params: &ModelParams,
    state: &mut HeadingState,
    t_end: f64,
    sample_dt: f64,
    rng: &mut R,
    mut on_sample: F,
) -> Result<RunSummary>
where
    R: Rng + ?Sized,
    F: FnMut(&HeadingState),
{
    params.validate()?;
    if !(t_end > 0.0 && sample_dt > 0.0 && t_end.is_finite() && sample_dt.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "t_end and sample_dt must be positive, got {t_end} and {sample_dt}"
        )));
    }
    if t_end < sample_dt {
        return Err(Error::EmptyTrajectory { t_end, sample_dt });
    }
    if state.headings.len() != params.n_agents {
        return Err(Error::DimensionMismatch {
            expected: params.n_agents,
            got: state.headings.len(),
        });
    }
    let n_frames = (t_end / sample_dt + 1e-9).floor() as usize + 1;
    let mut summary = RunSummary::default();
    let mut norm_sum = 0.0;
    let mut clock = 0.0;
    let mut next = 0;
    loop {
        let event_time = clock + draw_waiting_time(params, rng);
        // The state is constant between events.
        while next < n_frames && (next as f64) * sample_dt < event_time {
            state.time = next as f64 * sample_dt;
            norm_sum += crate::linalg::norm(state.polarization());
            on_sample(state);
            next += 1;
        }
        if next == n_frames {
            break;
        }
        apply_event(&mut state.headings, params, rng);
        clock = event_time;
        summary.events += 1;
    }
    summary.frames = n_frames;
    summary.mean_polarization_norm = norm_sum / n_frames as f64;
    Ok(summary)
}

/// Simulates from i.i.d. uniform headings and records every snapshot.
pub fn simulate_abm(
    params: &ModelParams,
    t_end: f64,
    sample_dt: f64,
    seed: u64,
) -> Result<HeadingTrajectory> {
    simulate_replicate(params, t_end, sample_dt, seed, 0).map(|(t, _)| t)
}

/// Replicate `index` of a seeded family; replicate 0 is [`simulate_abm`].
pub fn simulate_replicate(
    params: &ModelParams,
    t_end: f64,
    sample_dt: f64,
    seed: u64,
    index: u32,
) -> Result<(HeadingTrajectory, RunSummary)> {
    params.validate()?;
    let mut init_rng = rng::stream_rng(seed, stream::ABM_INIT + index as u64);
    let state = HeadingState::random(params.n_agents, &mut init_rng);
    simulate_abm_from(params, state, t_end, sample_dt, seed, index)
}

pub fn simulate_abm_from(
    params: &ModelParams,
    mut state: HeadingState,
    t_end: f64,
    sample_dt: f64,
    seed: u64,
    index: u32,
) -> Result<(HeadingTrajectory, RunSummary)> {
    let mut rng = rng::stream_rng(seed, stream::ABM + index as u64);
    let mut frames = Vec::new();
    let summary = run_sampled(params, &mut state, t_end, sample_dt, &mut rng, |s| {
        frames.push(s.clone())
    })?;
    Ok((HeadingTrajectory { sample_dt, frames }, summary))
}

/// Polarization vectors at each sample time, without keeping the headings.
pub fn simulate_polarization(
    params: &ModelParams,
    t_end: f64,
    sample_dt: f64,
    seed: u64,
    index: u32,
) -> Result<(Vec<Vec2>, RunSummary)> {
    params.validate()?;
    let mut init_rng = rng::stream_rng(seed, stream::ABM_INIT + index as u64);
    let mut state = HeadingState::random(params.n_agents, &mut init_rng);
    let mut rng = rng::stream_rng(seed, stream::ABM + index as u64);
    let mut m = Vec::new();
    let summary = run_sampled(params, &mut state, t_end, sample_dt, &mut rng, |s| {
        m.push(s.polarization())
    })?;
    Ok((m, summary))
}

/// Independent replicates, one random stream each, returned in index order.
pub fn simulate_replicates(
    params: &ModelParams,
    t_end: f64,
    sample_dt: f64,
    seed: u64,
    count: usize,
    exec: Execution,
) -> Result<Vec<(HeadingTrajectory, RunSummary)>> {
    exec.map(count, |i| {
        simulate_replicate(params, t_end, sample_dt, seed, i as u32)
    })
    .into_iter()
    .collect()
}
