//! `mesosde`: simulate → polarization → fit → simulate-sde → validate → fields.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use mesosde::abm::{self, ModelParams};
use mesosde::analytic_sde::AnalyticSde;
use mesosde::estimator::{self, SdeModel, TrainConfig};
use mesosde::fields::{self, Colormap, GridSpec, RenderOptions};
use mesosde::metrics::{self, FitOptions, TauMethod};
use mesosde::neural_net::AdamaxConfig;
use mesosde::order_parameter::{self, PolarizationSeries};
use mesosde::sde_simulate::{self, Boundary, SimConfig};
use mesosde::{DriftDiffusion, Execution};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DATA: u8 = 4;

#[derive(Parser)]
#[command(name = "mesosde", version, about = "Discover mesoscale SDEs for collective-motion polarization")]
struct Cli {
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the agent-based flocking model and write headings.
    #[command(args_override_self = true)]
    SimulateAbm(SimulateAbmArgs),
    /// Compute the polarization series from a trajectory CSV.
    #[command(args_override_self = true)]
    Polarization(PolarizationArgs),
    /// Fit drift and diffusion networks to polarization series.
    #[command(args_override_self = true)]
    Fit(FitArgs),
    /// Integrate a fitted or closed-form SDE.
    #[command(args_override_self = true)]
    SimulateSde(SimulateSdeArgs),
    /// Compare a model simulation with reference data.
    #[command(args_override_self = true)]
    Validate(ValidateArgs),
    /// Export drift and diffusion fields as SVG and CSV.
    #[command(args_override_self = true)]
    Fields(FieldsArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// `key = value` file with defaults for this subcommand's flags.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RateArgs {
    /// Number of agents.
    #[arg(long)]
    n: Option<usize>,
    /// Spontaneous turning rate.
    #[arg(long)]
    r1: Option<f64>,
    /// Pairwise copying rate.
    #[arg(long)]
    r2: Option<f64>,
    /// Ternary copying rate.
    #[arg(long)]
    r3: Option<f64>,
}

impl RateArgs {
    fn params(&self) -> Result<ModelParams, CliError> {
        let n = self.n.ok_or_else(|| CliError::usage("--n is required"))?;
        let p = ModelParams::new(
            n,
            self.r1.unwrap_or(0.0),
            self.r2.unwrap_or(0.0),
            self.r3.unwrap_or(0.0),
        )?;
        Ok(p)
    }
}

#[derive(Args)]
struct SimulateAbmArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    rates: RateArgs,
    /// Simulated time span.
    #[arg(long)]
    t_end: f64,
    /// Sampling interval.
    #[arg(long, default_value_t = abm::DEFAULT_SAMPLE_DT)]
    dt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replicate index within the seeded family.
    #[arg(long, default_value_t = 0)]
    replicate: u32,
    /// Heading CSV (`t,agent_id,theta`).
    #[arg(long, default_value = "abm.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct PolarizationArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Heading or velocity trajectory CSV.
    #[arg(long)]
    input: PathBuf,
    /// Polarization CSV (`t,mx,my`).
    #[arg(long, default_value = "polarization.csv")]
    out: PathBuf,
    /// Leading fraction of samples to discard.
    #[arg(long, default_value_t = abm::DEFAULT_BURN_IN)]
    burn_in: f64,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Polarization CSV; repeat for several recordings.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long, default_value = "model.txt")]
    model_out: PathBuf,
    /// Per-epoch `epoch,train_nll,val_nll` CSV.
    #[arg(long, default_value = "train_report.csv")]
    report_out: PathBuf,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.9)]
    train_fraction: f64,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train on the original series only.
    #[arg(long)]
    no_augment: bool,
    #[arg(long, default_value_t = 5)]
    hidden_layers: usize,
    #[arg(long, default_value_t = 150)]
    hidden_width: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Learning-rate factor applied after `patience / 2` stale epochs.
    #[arg(long, default_value_t = 1.0)]
    lr_decay: f64,
    /// Random pairs visited per epoch (default: all).
    #[arg(long)]
    pairs_per_epoch: Option<usize>,
    /// Pairs per split used to report epoch losses.
    #[arg(long, default_value_t = 100_000)]
    eval_pairs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Pairwise,
    Ternary,
}

#[derive(Args)]
struct ModelSource {
    /// Fitted model file.
    #[arg(long, conflicts_with = "analytic")]
    model: Option<PathBuf>,
    /// Closed-form model instead of a fitted one.
    #[arg(long, value_enum)]
    analytic: Option<Kind>,
    #[command(flatten)]
    rates: RateArgs,
}

impl ModelSource {
    fn load(&self) -> Result<Box<dyn DriftDiffusion + Sync>, CliError> {
        match (&self.model, self.analytic) {
            (Some(path), None) => Ok(Box::new(SdeModel::load(path)?)),
            (None, Some(kind)) => {
                let p = self.rates.params()?;
                let kind = match kind {
                    Kind::Pairwise => mesosde::analytic_sde::Interaction::Pairwise,
                    Kind::Ternary => mesosde::analytic_sde::Interaction::Ternary,
                };
                Ok(Box::new(AnalyticSde::new(kind, p)?))
            }
            _ => Err(CliError::usage("give exactly one of --model or --analytic")),
        }
    }
}

#[derive(Args)]
struct SimulateSdeArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    source: ModelSource,
    #[arg(long, default_value_t = abm::DEFAULT_SAMPLE_DT)]
    dt: f64,
    #[arg(long)]
    n_steps: usize,
    /// Initial state `mx,my`.
    #[arg(long, default_value = "0,0", value_parser = parse_vec2)]
    m0: [f64; 2],
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Integration steps per output sample.
    #[arg(long, default_value_t = 1)]
    substeps: usize,
    /// Do not project states back onto the unit disc.
    #[arg(long)]
    free: bool,
    #[arg(long, default_value = "sde.csv")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Tau {
    Efold,
    Integrated,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    source: ModelSource,
    /// Reference polarization CSV.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Compare the reference with itself instead of a simulation.
    #[arg(long)]
    self_compare: bool,
    /// Single-row `w1,tau_real,tau_sim,t_rel` CSV.
    #[arg(long, default_value = "fit_report.csv")]
    out: PathBuf,
    /// `|m|` histograms of both series.
    #[arg(long, default_value = "histogram.csv")]
    hist_out: PathBuf,
    /// Autocorrelation of `|m|` for both series.
    #[arg(long, default_value = "acf.csv")]
    acf_out: PathBuf,
    /// Simulated series.
    #[arg(long)]
    sim_out: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// Defaults to min(length / 5, 2000).
    #[arg(long)]
    max_lag: Option<usize>,
    #[arg(long, value_enum, default_value = "efold")]
    tau: Tau,
}

#[derive(Args)]
struct FieldsArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    source: ModelSource,
    /// Grid points per axis.
    #[arg(long, default_value_t = 21)]
    resolution: usize,
    #[arg(long, default_value = "viridis")]
    colormap: Colormap,
    #[arg(long, default_value = "drift.svg")]
    drift_out: PathBuf,
    #[arg(long, default_value = "diffusion.svg")]
    diffusion_out: PathBuf,
    #[arg(long, default_value = "fields.csv")]
    csv_out: PathBuf,
}

fn parse_vec2(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s.split_once(',').ok_or("expected `x,y`")?;
    let x = a.trim().parse().map_err(|e| format!("{e}"))?;
    let y = b.trim().parse().map_err(|e| format!("{e}"))?;
    Ok([x, y])
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Io(PathBuf, std::io::Error),
    Core(mesosde::Error),
}

impl CliError {
    fn usage(msg: &str) -> Self {
        CliError::Usage(msg.to_string())
    }

    fn exit_code(&self) -> u8 {
        use mesosde::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(..) => EXIT_IO,
            CliError::Core(e) => match e {
                E::Io { .. } => EXIT_IO,
                E::InsufficientData(_) | E::EmptyTrajectory { .. } => EXIT_DATA,
                E::Diverged { .. } | E::NonFinite(_) => EXIT_FAILURE,
                _ => EXIT_USAGE,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<mesosde::Error> for CliError {
    fn from(e: mesosde::Error) -> Self {
        CliError::Core(e)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn write_with<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn main() -> ExitCode {
    let args: Vec<_> = std::env::args_os().collect();
    let args = match config::expand(args, &Cli::command()) {
        Ok(a) => a,
        Err(config::ConfigError::Read(path, e)) => {
            eprintln!("error: {path}: {e}");
            return ExitCode::from(EXIT_IO);
        }
        Err(config::ConfigError::Invalid(msg)) => {
            eprintln!("error: config {msg}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let result = match cli.command {
        Command::SimulateAbm(a) => simulate_abm(a),
        Command::Polarization(a) => polarization(a),
        Command::Fit(a) => fit(a, exec),
        Command::SimulateSde(a) => simulate_sde(a),
        Command::Validate(a) => validate(a),
        Command::Fields(a) => export_fields(a, exec),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn simulate_abm(a: SimulateAbmArgs) -> Result<(), CliError> {
    let params = a.rates.params()?;
    let (traj, summary) = abm::simulate_replicate(&params, a.t_end, a.dt, a.seed, a.replicate)?;
    write_with(&a.out, |w| traj.write_csv(w))?;
    println!(
        "events: {}\nframes: {}\nmean |m|: {:.6}\nwrote {}",
        summary.events,
        summary.frames,
        summary.mean_polarization_norm,
        a.out.display()
    );
    Ok(())
}

fn polarization(a: PolarizationArgs) -> Result<(), CliError> {
    let frames = order_parameter::load_trajectory_csv(&a.input)?;
    let build = order_parameter::series_from_frames(&frames)?;
    let series = build.series.discard_burn_in(a.burn_in)?;
    write_with(&a.out, |w| series.write_csv(w))?;
    println!(
        "samples: {}\ninvalid frames dropped: {}\nmissing frames: {}\nwrote {}",
        series.len(),
        build.dropped,
        series.missing_frames(),
        a.out.display()
    );
    Ok(())
}

fn fit(a: FitArgs, exec: Execution) -> Result<(), CliError> {
    let series = a
        .input
        .iter()
        .map(PolarizationSeries::load_csv)
        .collect::<Result<Vec<_>, _>>()?;
    let config = TrainConfig {
        batch_size: a.batch_size,
        train_fraction: a.train_fraction,
        max_epochs: a.max_epochs,
        patience: a.patience,
        seed: a.seed,
        augment: !a.no_augment,
        hidden_layers: a.hidden_layers,
        hidden_width: a.hidden_width,
        optimizer: AdamaxConfig {
            learning_rate: a.lr,
            ..AdamaxConfig::default()
        },
        lr_decay: a.lr_decay,
        max_pairs_per_epoch: a.pairs_per_epoch,
        max_eval_pairs: Some(a.eval_pairs),
        execution: exec,
        ..TrainConfig::default()
    };
    let (model, report) = match estimator::train(&series, &config) {
        Ok(r) => r,
        Err(mesosde::Error::Diverged { epoch, checkpoint }) => {
            let _ = checkpoint.save(&a.model_out);
            return Err(CliError::Core(mesosde::Error::NonFinite(format!(
                "training diverged at epoch {epoch}; last good checkpoint saved to {}",
                a.model_out.display()
            ))));
        }
        Err(e) => return Err(e.into()),
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    model.save(&a.model_out)?;
    write_with(&a.report_out, |w| report.write_csv(w))?;
    println!(
        "original pairs: {}\ntraining pairs: {}\ntrain pairs: {}\nvalidation pairs: {}\nepochs: {}\nbest epoch: {}\nbest validation nll: {:.6}\nwrote {} and {}",
        report.original_pairs,
        report.train_pairs + report.val_pairs,
        report.train_pairs,
        report.val_pairs,
        report.epochs.len(),
        report.best_epoch,
        report.best_val_nll,
        a.model_out.display(),
        a.report_out.display()
    );
    Ok(())
}

fn simulate_sde(a: SimulateSdeArgs) -> Result<(), CliError> {
    let model = a.source.load()?;
    let cfg = SimConfig {
        boundary: if a.free { Boundary::Free } else { Boundary::Project },
        substeps: a.substeps,
        ..SimConfig::new(a.dt, a.n_steps, a.m0, a.seed)
    };
    let series = sde_simulate::simulate_model(model.as_ref(), &cfg)?;
    write_with(&a.out, |w| series.write_csv(w))?;
    let mean = series.norms().iter().sum::<f64>() / series.len() as f64;
    println!("samples: {}\nmean |m|: {mean:.6}\nwrote {}", series.len(), a.out.display());
    Ok(())
}

/// One simulated trajectory per gap-free run of `reference`, each starting
/// from the run's first sample and matching its length.
fn matched_simulation(
    model: &(dyn DriftDiffusion + Sync),
    reference: &PolarizationSeries,
    seed: u64,
) -> Result<PolarizationSeries, CliError> {
    let parts = reference
        .runs()
        .into_iter()
        .enumerate()
        .map(|(i, run)| {
            let cfg = SimConfig::new(reference.dt(), run.len() - 1, reference.samples()[run.start], seed);
            sde_simulate::euler_maruyama_indexed(|m| model.drift(m), |m| model.cov(m), &cfg, i as u64)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PolarizationSeries::concat(&parts)?)
}

fn validate(a: ValidateArgs) -> Result<(), CliError> {
    let reference = PolarizationSeries::load_csv(&a.reference)?;
    let sim = if a.self_compare {
        reference.clone()
    } else {
        let model = a.source.load()?;
        matched_simulation(model.as_ref(), &reference, a.seed)?
    };
    let options = FitOptions {
        max_lag: a.max_lag,
        tau: match a.tau {
            Tau::Efold => TauMethod::EFold,
            Tau::Integrated => TauMethod::Integrated,
        },
    };
    let report = metrics::fit_report_with(&reference, &sim, options)?;
    write_with(&a.out, |w| report.write_csv(w))?;

    let (centres, real_h) = metrics::histogram(&reference.norms(), a.bins.max(1), 0.0, 1.0);
    let (_, sim_h) = metrics::histogram(&sim.norms(), a.bins.max(1), 0.0, 1.0);
    write_with(&a.hist_out, |w| {
        writeln!(w, "norm,density_reference,density_simulated")?;
        for ((c, r), s) in centres.iter().zip(&real_h).zip(&sim_h) {
            writeln!(w, "{c},{r},{s}")?;
        }
        Ok(())
    })?;

    let max_lag = a
        .max_lag
        .unwrap_or_else(|| metrics::default_max_lag(reference.len().min(sim.len())));
    let acf_real = metrics::norm_acf(&reference, max_lag)?;
    let acf_sim = metrics::norm_acf(&sim, max_lag)?;
    write_with(&a.acf_out, |w| {
        writeln!(w, "lag,time,acf_reference,acf_simulated")?;
        for (k, (r, s)) in acf_real.iter().zip(&acf_sim).enumerate() {
            writeln!(w, "{k},{},{r},{s}", k as f64 * reference.dt())?;
        }
        Ok(())
    })?;
    if let Some(path) = &a.sim_out {
        write_with(path, |w| sim.write_csv(w))?;
    }
    println!(
        "w1: {:.6}\ntau_real: {:.6}\ntau_sim: {:.6}\nt_rel: {:.6}\nwrote {}",
        report.w1,
        report.tau_real,
        report.tau_sim,
        report.t_rel,
        a.out.display()
    );
    Ok(())
}

fn export_fields(a: FieldsArgs, exec: Execution) -> Result<(), CliError> {
    if a.resolution == 0 {
        return Err(CliError::usage("--resolution must be at least 1"));
    }
    let model = a.source.load()?;
    let grid = fields::eval_fields(model.as_ref(), &GridSpec::new(a.resolution), exec)?;
    let svgs = fields::render_svg(
        &grid,
        &RenderOptions {
            colormap: a.colormap,
            ..RenderOptions::default()
        },
    );
    write_with(&a.drift_out, |w| w.write_all(svgs.drift.as_bytes()))?;
    write_with(&a.diffusion_out, |w| w.write_all(svgs.diffusion.as_bytes()))?;
    write_with(&a.csv_out, |w| grid.write_csv(w))?;
    println!(
        "points: {}\nwrote {}, {} and {}",
        grid.points.len(),
        a.drift_out.display(),
        a.diffusion_out.display(),
        a.csv_out.display()
    );
    Ok(())
}
