//! Maximum-likelihood fitting of a neural drift/diffusion model.
//!
//! Over one sampling interval `dt` the Euler approximation makes the next
//! state Gaussian, `m1 ~ N(m0 + f(m0) dt, G(m0) dt)`. The drift network maps
//! `m ↦ f(m)`; the diffusion network emits three raw numbers `(a, b, c)` that
//! form the Cholesky factor `L = [[eᵃ, 0], [b, eᶜ]]` of `G = L Lᵀ`, which is
//! positive definite for any network output. Training minimizes the mean
//! negative log-likelihood of consecutive sample pairs with Adamax.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;

use crate::linalg::{self, Mat2, Vec2};
use crate::neural_net::{
    self, read_mlp, write_mlp, AdamaxConfig, AdamaxState, MlpGradients, MlpParams, MlpSpec,
};
use crate::order_parameter::{augment, PolarizationSeries, DISC_TOLERANCE, TIME_TOLERANCE};
use crate::rng::{stream, stream_rng};
use crate::{DriftDiffusion, Error, Execution, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Lower bound on the raw log-diagonal of the Cholesky factor; keeps the
/// diagonal of `L` at or above 1e-6.
pub const MIN_LOG_DIAG: f64 = -13.815_510_557_964_274;
/// Rows per work unit in batched gradient evaluation. Fixed so that the
/// reduction order does not depend on the thread count.
const CHUNK_ROWS: usize = 128;
pub const MODEL_MAGIC: &str = "MESO-SDE-MODEL v1";
/// Below this many training pairs (after augmentation) a warning is issued.
pub const RECOMMENDED_MIN_PAIRS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct SdeModel {
    /// `ℝ² → ℝ²`.
    pub drift: MlpParams,
    /// `ℝ² → ℝ³`, raw Cholesky entries `(ln l11, l21, ln l22)`.
    pub diffusion: MlpParams,
    /// Sampling interval of the training data.
    pub dt: f64,
}

impl SdeModel {
    pub fn new(drift: MlpParams, diffusion: MlpParams, dt: f64) -> Result<Self> {
        let (d, g) = (drift.spec(), diffusion.spec());
        if d.input_dim != 2 || d.output_dim != 2 {
            return Err(Error::InvalidParameter("drift network must map 2 -> 2".into()));
        }
        if g.input_dim != 2 || g.output_dim != 3 {
            return Err(Error::InvalidParameter(
                "diffusion network must map 2 -> 3".into(),
            ));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        Ok(SdeModel {
            drift,
            diffusion,
            dt,
        })
    }

    pub fn drift_at(&self, m: Vec2) -> Vec2 {
        let mut out = [0.0; 2];
        self.drift.forward_into(&m, &mut out);
        out
    }

    pub fn raw_diffusion_at(&self, m: Vec2) -> [f64; 3] {
        let mut out = [0.0; 3];
        self.diffusion.forward_into(&m, &mut out);
        out
    }

    pub fn cov_at(&self, m: Vec2) -> Mat2 {
        cov_from_raw(self.raw_diffusion_at(m))
    }

    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{MODEL_MAGIC}")?;
        writeln!(w, "dt {}", self.dt)?;
        writeln!(w, "drift")?;
        write_mlp(&self.drift, w)?;
        writeln!(w, "diffusion")?;
        write_mlp(&self.diffusion, w)?;
        w.flush()
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = |what: &str| -> Result<String> {
            match lines.next() {
                Some(Ok(l)) => Ok(l.trim().to_string()),
                Some(Err(e)) => Err(Error::Format(e.to_string())),
                None => Err(Error::Format(format!("missing {what}"))),
            }
        };
        let magic = next("header")?;
        if magic != MODEL_MAGIC {
            return Err(Error::Format(format!(
                "expected `{MODEL_MAGIC}`, found `{magic}`"
            )));
        }
        let dt_line = next("dt")?;
        let dt = dt_line
            .strip_prefix("dt ")
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::Format(format!("expected `dt <value>`, found `{dt_line}`")))?;
        if next("drift section")? != "drift" {
            return Err(Error::Format("expected `drift` section".into()));
        }
        let drift = read_mlp(&mut lines)?;
        let mut next = |what: &str| -> Result<String> {
            loop {
                match lines.next() {
                    Some(Ok(l)) if l.trim().is_empty() => continue,
                    Some(Ok(l)) => return Ok(l.trim().to_string()),
                    Some(Err(e)) => return Err(Error::Format(e.to_string())),
                    None => return Err(Error::Format(format!("missing {what}"))),
                }
            }
        };
        if next("diffusion section")? != "diffusion" {
            return Err(Error::Format("expected `diffusion` section".into()));
        }
        let diffusion = read_mlp(&mut lines)?;
        SdeModel::new(drift, diffusion, dt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(&mut std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file))
    }
}

impl DriftDiffusion for SdeModel {
    fn drift(&self, m: Vec2) -> Vec2 {
        self.drift_at(m)
    }

    fn cov(&self, m: Vec2) -> Mat2 {
        self.cov_at(m)
    }
}

/// Two consecutive samples, `dt` apart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionPair {
    pub m0: Vec2,
    pub m1: Vec2,
    pub dt: f64,
}

fn common_dt(series: &[PolarizationSeries]) -> Result<f64> {
    let first = series.first().ok_or(Error::Empty("no series"))?.dt();
    for s in series {
        if (s.dt() - first).abs() > TIME_TOLERANCE * first {
            return Err(Error::InvalidParameter(format!(
                "series have different sampling intervals: {first} and {}",
                s.dt()
            )));
        }
    }
    Ok(first)
}

/// One pair per consecutive sample within each series, never across series
/// boundaries or across missing frames.
pub fn build_pairs(series: &[PolarizationSeries]) -> Result<Vec<TransitionPair>> {
    let dt = common_dt(series)?;
    let mut out = Vec::new();
    for s in series {
        let (frames, m) = (s.frames(), s.samples());
        for i in 1..s.len() {
            if frames[i] == frames[i - 1] + 1 {
                out.push(TransitionPair {
                    m0: m[i - 1],
                    m1: m[i],
                    dt,
                });
            }
        }
    }
    Ok(out)
}

/// `G = L Lᵀ` with `L = [[exp(raw0), 0], [raw1, exp(raw2)]]`.
pub fn cov_from_raw(raw: [f64; 3]) -> Mat2 {
    let l11 = raw[0].max(MIN_LOG_DIAG).exp();
    let l21 = raw[1];
    let l22 = raw[2].max(MIN_LOG_DIAG).exp();
    [[l11 * l11, l11 * l21], [l11 * l21, l21 * l21 + l22 * l22]]
}

/// Negative log-density of `pair.m1` under `N(m0 + f dt, G dt)`.
pub fn nll(f: Vec2, g: &Mat2, pair: &TransitionPair) -> f64 {
    let dt = pair.dt;
    let r = [
        pair.m1[0] - pair.m0[0] - f[0] * dt,
        pair.m1[1] - pair.m0[1] - f[1] * dt,
    ];
    let sigma = [[g[0][0] * dt, g[0][1] * dt], [g[1][0] * dt, g[1][1] * dt]];
    let det = linalg::det(&sigma);
    let inv = [
        [sigma[1][1] / det, -sigma[0][1] / det],
        [-sigma[1][0] / det, sigma[0][0] / det],
    ];
    let quad = linalg::dot(r, linalg::mat_vec(&inv, r));
    0.5 * quad + 0.5 * det.ln() + (2.0 * PI).ln()
}

/// NLL in terms of the raw diffusion output, with its gradients with respect
/// to `f` and `raw`.
fn nll_raw(f: Vec2, raw: [f64; 3], m0: Vec2, m1: Vec2, dt: f64) -> (f64, Vec2, [f64; 3]) {
    let (a, clamp_a) = clamp_log(raw[0]);
    let (c, clamp_c) = clamp_log(raw[2]);
    let b = raw[1];
    let sqrt_dt = dt.sqrt();
    let rho = [
        (m1[0] - m0[0] - f[0] * dt) / sqrt_dt,
        (m1[1] - m0[1] - f[1] * dt) / sqrt_dt,
    ];
    let (ia, ic) = ((-a).exp(), (-c).exp());
    // z = L⁻¹ ρ
    let z1 = rho[0] * ia;
    let z2 = (rho[1] - b * z1) * ic;
    let loss = 0.5 * (z1 * z1 + z2 * z2) + a + c + dt.ln() + LN_2PI;
    let g_rho = [z1 * ia - z2 * b * ia * ic, z2 * ic];
    let df = [-sqrt_dt * g_rho[0], -sqrt_dt * g_rho[1]];
    let da = if clamp_a { 0.0 } else { 1.0 - z1 * z1 + z2 * b * z1 * ic };
    let db = -z2 * z1 * ic;
    let dc = if clamp_c { 0.0 } else { 1.0 - z2 * z2 };
    (loss, df, [da, db, dc])
}

fn clamp_log(x: f64) -> (f64, bool) {
    if x < MIN_LOG_DIAG {
        (MIN_LOG_DIAG, true)
    } else {
        (x, false)
    }
}

/// Mean NLL over a batch and its gradient for both networks.
#[derive(Debug, Clone)]
pub struct LossGradient {
    pub loss: f64,
    pub drift: MlpGradients,
    pub diffusion: MlpGradients,
}

/// Exact gradient of the mean NLL of `batch` with respect to all parameters.
pub fn loss_gradient(model: &SdeModel, batch: &[TransitionPair]) -> Result<LossGradient> {
    let set = PairSet::from_pairs(batch)?;
    Ok(batch_gradient(model, &set.m0.view(), &set.m1.view(), set.dt, Execution::default()))
}

/// Pairs stored as `(n × 2)` arrays for batched evaluation.
#[derive(Debug, Clone)]
pub struct PairSet {
    pub m0: Array2<f64>,
    pub m1: Array2<f64>,
    pub dt: f64,
}

impl PairSet {
    pub fn from_pairs(pairs: &[TransitionPair]) -> Result<Self> {
        let first = pairs.first().ok_or(Error::Empty("batch"))?;
        let mut m0 = Array2::zeros((pairs.len(), 2));
        let mut m1 = Array2::zeros((pairs.len(), 2));
        for (i, p) in pairs.iter().enumerate() {
            m0[[i, 0]] = p.m0[0];
            m0[[i, 1]] = p.m0[1];
            m1[[i, 0]] = p.m1[0];
            m1[[i, 1]] = p.m1[1];
        }
        Ok(PairSet {
            m0,
            m1,
            dt: first.dt,
        })
    }

    pub fn len(&self) -> usize {
        self.m0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, idx: &[usize]) -> (Array2<f64>, Array2<f64>) {
        let mut a = Array2::zeros((idx.len(), 2));
        let mut b = Array2::zeros((idx.len(), 2));
        for (r, &i) in idx.iter().enumerate() {
            a.row_mut(r).assign(&self.m0.row(i));
            b.row_mut(r).assign(&self.m1.row(i));
        }
        (a, b)
    }
}

struct ChunkResult {
    loss: f64,
    drift: MlpGradients,
    diffusion: MlpGradients,
}

fn chunk_gradient(model: &SdeModel, m0: ArrayView2<f64>, m1: ArrayView2<f64>, dt: f64) -> ChunkResult {
    let n = m0.nrows();
    let fc = model.drift.forward_cached(m0);
    let gc = model.diffusion.forward_cached(m0);
    let mut up_f = Array2::zeros((n, 2));
    let mut up_g = Array2::zeros((n, 3));
    let mut loss = 0.0;
    for i in 0..n {
        let f = [fc.output[[i, 0]], fc.output[[i, 1]]];
        let raw = [gc.output[[i, 0]], gc.output[[i, 1]], gc.output[[i, 2]]];
        let (l, df, draw) = nll_raw(
            f,
            raw,
            [m0[[i, 0]], m0[[i, 1]]],
            [m1[[i, 0]], m1[[i, 1]]],
            dt,
        );
        loss += l;
        up_f[[i, 0]] = df[0];
        up_f[[i, 1]] = df[1];
        for k in 0..3 {
            up_g[[i, k]] = draw[k];
        }
    }
    let (drift, _) = model.drift.backward(&fc, up_f.view());
    let (diffusion, _) = model.diffusion.backward(&gc, up_g.view());
    ChunkResult {
        loss,
        drift,
        diffusion,
    }
}

fn batch_gradient(
    model: &SdeModel,
    m0: &ArrayView2<f64>,
    m1: &ArrayView2<f64>,
    dt: f64,
    exec: Execution,
) -> LossGradient {
    let n = m0.nrows();
    let chunks = n.div_ceil(CHUNK_ROWS);
    let parts = exec.map(chunks, |c| {
        let lo = c * CHUNK_ROWS;
        let hi = (lo + CHUNK_ROWS).min(n);
        chunk_gradient(model, m0.slice(s![lo..hi, ..]), m1.slice(s![lo..hi, ..]), dt)
    });
    let mut drift = model.drift.zero_gradients();
    let mut diffusion = model.diffusion.zero_gradients();
    let mut loss = 0.0;
    for p in parts {
        loss += p.loss;
        neural_net::add_assign(&mut drift, &p.drift);
        neural_net::add_assign(&mut diffusion, &p.diffusion);
    }
    let inv = 1.0 / n as f64;
    neural_net::scale_in_place(&mut drift, inv);
    neural_net::scale_in_place(&mut diffusion, inv);
    LossGradient {
        loss: loss * inv,
        drift,
        diffusion,
    }
}

/// Mean NLL of `set` under `model` (forward passes only).
pub fn mean_nll(model: &SdeModel, set: &PairSet, exec: Execution) -> f64 {
    let n = set.len();
    if n == 0 {
        return f64::NAN;
    }
    let chunk = 4 * CHUNK_ROWS;
    let parts = exec.map(n.div_ceil(chunk), |c| {
        let lo = c * chunk;
        let hi = (lo + chunk).min(n);
        let m0 = set.m0.slice(s![lo..hi, ..]);
        let f = model.drift.forward_batch(m0);
        let g = model.diffusion.forward_batch(m0);
        (0..hi - lo)
            .map(|i| {
                nll_raw(
                    [f[[i, 0]], f[[i, 1]]],
                    [g[[i, 0]], g[[i, 1]], g[[i, 2]]],
                    [m0[[i, 0]], m0[[i, 1]]],
                    [set.m1[[lo + i, 0]], set.m1[[lo + i, 1]]],
                    set.dt,
                )
                .0
            })
            .sum::<f64>()
    });
    parts.into_iter().sum::<f64>() / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub train_fraction: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Train on the original plus 16 rotated and 2 flipped copies.
    pub augment: bool,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub optimizer: AdamaxConfig,
    /// Multiply the learning rate by this factor whenever validation loss
    /// has not improved for `patience / 2` epochs. `1.0` disables decay.
    pub lr_decay: f64,
    /// Optimizer steps per epoch see at most this many randomly drawn pairs.
    pub max_pairs_per_epoch: Option<usize>,
    /// Per-epoch loss reporting uses a fixed random subset of at most this
    /// many pairs from each split.
    pub max_eval_pairs: Option<usize>,
    /// Contiguous blocks each series is cut into for the train/validation
    /// split.
    pub split_blocks: usize,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            train_fraction: 0.9,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            augment: true,
            hidden_layers: MlpSpec::DEFAULT_HIDDEN_LAYERS,
            hidden_width: MlpSpec::DEFAULT_HIDDEN_WIDTH,
            optimizer: AdamaxConfig::default(),
            lr_decay: 1.0,
            max_pairs_per_epoch: None,
            max_eval_pairs: Some(100_000),
            split_blocks: 10,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.split_blocks < 2 {
            return bad("split_blocks must be at least 2".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.optimizer.learning_rate.is_nan() || self.optimizer.learning_rate <= 0.0 {
            return bad("learning rate must be positive".into());
        }
        MlpSpec::new(2, self.hidden_layers, self.hidden_width, 2)?;
        Ok(())
    }

    fn validation_blocks(&self) -> usize {
        let v = (self.split_blocks as f64 * (1.0 - self.train_fraction)).round() as usize;
        v.clamp(1, self.split_blocks - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_nll: f64,
    /// Consecutive-sample pairs in the input, before augmentation.
    pub original_pairs: usize,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub stopped_early: bool,
    pub warnings: Vec<String>,
}

impl TrainReport {
    /// Writes the `epoch,train_nll,val_nll` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_nll,val_nll")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{}", e.epoch, e.train_nll, e.val_nll)?;
        }
        w.flush()
    }
}

/// Splits every series into contiguous blocks, assigns whole blocks to the
/// validation split, augments each block and forms pairs within it.
fn split_pairs(
    series: &[PolarizationSeries],
    config: &TrainConfig,
) -> Result<(Vec<TransitionPair>, Vec<TransitionPair>, usize)> {
    let mut rng = stream_rng(config.seed, stream::TRAIN_SPLIT);
    let n_blocks = config.split_blocks;
    let n_val = config.validation_blocks();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    let mut original = 0;
    for s in series {
        original += build_pairs(std::slice::from_ref(s))?.len();
        let mut order: Vec<usize> = (0..n_blocks).collect();
        order.shuffle(&mut rng);
        let val_blocks = &order[..n_val];
        let len = s.len();
        for b in 0..n_blocks {
            let range = (b * len / n_blocks)..((b + 1) * len / n_blocks);
            if range.len() < 2 {
                continue;
            }
            let block = s.slice(range);
            let copies = if config.augment {
                augment(&block)
            } else {
                vec![block]
            };
            let pairs = build_pairs(&copies)?;
            if val_blocks.contains(&b) {
                val.extend(pairs);
            } else {
                train.extend(pairs);
            }
        }
    }
    Ok((train, val, original))
}

fn eval_subset(set: &PairSet, cap: Option<usize>, seed: u64, stream_id: u64) -> PairSet {
    match cap {
        Some(cap) if set.len() > cap => {
            let mut idx: Vec<usize> = (0..set.len()).collect();
            idx.shuffle(&mut stream_rng(seed, stream_id));
            idx.truncate(cap);
            idx.sort_unstable();
            let (m0, m1) = set.gather(&idx);
            PairSet { m0, m1, dt: set.dt }
        }
        _ => set.clone(),
    }
}

/// Fresh model: Glorot weights, zero biases, except the diffusion output
/// bias, which starts at the log standard deviation of the increments so the
/// first steps see a covariance of the right scale.
fn initial_model(train: &PairSet, config: &TrainConfig) -> Result<SdeModel> {
    let mut rng = stream_rng(config.seed, stream::TRAIN_INIT);
    let drift = MlpParams::glorot(
        MlpSpec::new(2, config.hidden_layers, config.hidden_width, 2)?,
        &mut rng,
    );
    let mut diffusion = MlpParams::glorot(
        MlpSpec::new(2, config.hidden_layers, config.hidden_width, 3)?,
        &mut rng,
    );
    let n = train.len() as f64;
    let mut var = [0.0; 2];
    for (a, b) in train.m0.rows().into_iter().zip(train.m1.rows()) {
        for k in 0..2 {
            var[k] += (b[k] - a[k]).powi(2);
        }
    }
    let log_sd = |v: f64| (0.5 * (v / (n * train.dt)).max(1e-12).ln()).max(MIN_LOG_DIAG);
    let out = diffusion.output_layer_mut();
    out.bias[0] = log_sd(var[0]);
    out.bias[2] = log_sd(var[1]);
    SdeModel::new(drift, diffusion, train.dt)
}

/// Fits an [`SdeModel`] to the series and returns the parameters with the
/// lowest validation NLL together with the per-epoch report.
pub fn train(series: &[PolarizationSeries], config: &TrainConfig) -> Result<(SdeModel, TrainReport)> {
    config.validate()?;
    let dt = common_dt(series)?;
    for s in series {
        if s.samples().iter().any(|&m| linalg::norm(m) > 1.0 + DISC_TOLERANCE) {
            return Err(Error::OutsideDisc {
                norm: s.norms().into_iter().fold(0.0, f64::max),
            });
        }
    }
    let (train_pairs, val_pairs, original) = split_pairs(series, config)?;
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{original} transition pairs are too few for a train/validation split"
        )));
    }
    let mut report = TrainReport {
        original_pairs: original,
        train_pairs: train_pairs.len(),
        val_pairs: val_pairs.len(),
        ..TrainReport::default()
    };
    let total = train_pairs.len() + val_pairs.len();
    if total < RECOMMENDED_MIN_PAIRS {
        report.warnings.push(format!(
            "only {total} transition pairs after augmentation (recommended at least {RECOMMENDED_MIN_PAIRS})"
        ));
    }
    let train_set = PairSet::from_pairs(&train_pairs)?;
    let val_set = PairSet::from_pairs(&val_pairs)?;
    drop((train_pairs, val_pairs));
    debug_assert_eq!(train_set.dt, dt);

    let train_eval = eval_subset(&train_set, config.max_eval_pairs, config.seed, stream::TRAIN_SPLIT + 1);
    let val_eval = eval_subset(&val_set, config.max_eval_pairs, config.seed, stream::TRAIN_SPLIT + 2);

    let mut model = initial_model(&train_set, config)?;
    let mut opt_drift = AdamaxState::new(&model.drift, config.optimizer);
    let mut opt_diff = AdamaxState::new(&model.diffusion, config.optimizer);
    let mut shuffle_rng = stream_rng(config.seed, stream::TRAIN_SHUFFLE);
    let exec = config.execution;

    let mut best = model.clone();
    report.best_val_nll = mean_nll(&model, &val_eval, exec);
    report.best_epoch = 0;
    let mut since_best = 0;
    let mut since_decay = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let per_epoch = config
        .max_pairs_per_epoch
        .unwrap_or(usize::MAX)
        .min(train_set.len());

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order[..per_epoch].chunks(config.batch_size) {
            let (m0, m1) = train_set.gather(batch);
            let grad = batch_gradient(&model, &m0.view(), &m1.view(), dt, exec);
            if !grad.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    checkpoint: Box::new(best),
                });
            }
            opt_drift.step(&mut model.drift, &grad.drift);
            opt_diff.step(&mut model.diffusion, &grad.diffusion);
        }
        let train_nll = mean_nll(&model, &train_eval, exec);
        let val_nll = mean_nll(&model, &val_eval, exec);
        report.epochs.push(EpochStats {
            epoch,
            train_nll,
            val_nll,
            learning_rate: opt_drift.config.learning_rate,
        });
        if !val_nll.is_finite() {
            return Err(Error::Diverged {
                epoch,
                checkpoint: Box::new(best),
            });
        }
        if val_nll < report.best_val_nll {
            report.best_val_nll = val_nll;
            report.best_epoch = epoch;
            best = model.clone();
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
            if since_best >= config.patience {
                report.stopped_early = true;
                break;
            }
            if config.lr_decay < 1.0 && since_decay >= (config.patience / 2).max(1) {
                opt_drift.config.learning_rate *= config.lr_decay;
                opt_diff.config.learning_rate *= config.lr_decay;
                since_decay = 0;
            }
        }
    }
    Ok((best, report))
}
