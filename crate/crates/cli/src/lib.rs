//! Command-line driver. Every subcommand writes its artifacts into a fresh
//! run directory under `--out` and returns a small JSON-able summary.

mod commands;
mod run_dir;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gaugempc::gauge_policy::Squash;
use gaugempc::learner::PolicyKind;
use gaugempc::Error;
use serde_json::Value;

pub use run_dir::RunDir;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    /// Bad arguments, missing input files, malformed configs.
    Usage = 2,
    /// Reading or writing files failed.
    Io = 3,
    /// No affine Phase I law exists for the system.
    PhaseOneInfeasible = 4,
    /// Solver failure, divergence or another numerical breakdown.
    Numerical = 5,
    /// A safe policy produced an output outside the feasible set.
    Safety = 6,
}

impl Exit {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    pub fn new(exit: Exit, message: impl Into<String>) -> Self {
        Self {
            exit,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Exit::Usage, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let exit = match &e {
            Error::Io(_) => Exit::Io,
            Error::Parse(_) | Error::InvalidInput(_) | Error::Dimension(_) => Exit::Usage,
            Error::PhaseOneInfeasible { .. } => Exit::PhaseOneInfeasible,
            Error::SafetyViolation(_) => Exit::Safety,
            _ => Exit::Numerical,
        };
        let mut message = e.to_string();
        if exit == Exit::PhaseOneInfeasible {
            message.push_str("; pass `--phase1 lp` to train or evaluate with per-state LP interior points instead");
        }
        Self { exit, message }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(Exit::Io, e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "gaugempc", version, about = "Learn explicit MPC policies that are safe by construction")]
pub struct Cli {
    /// System definition (TOML); the bundled three-state benchmark when absent.
    #[arg(long, global = true)]
    pub system: Option<PathBuf>,

    /// Parent directory of run directories.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,

    /// Name of the run directory instead of `<command>-s<seed>-<unix time>`.
    #[arg(long, global = true)]
    pub run_name: Option<String>,

    /// Master seed; defaults to the seed in the system file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Upper bound on worker threads. Every stage currently runs on one.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    /// Print a JSON summary on stdout instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize an affine Phase I law and certify it on sampled states.
    Phase1(Phase1Args),
    /// Compute a robust control invariant set.
    Rci(RciArgs),
    /// Train a policy.
    Train(TrainArgs),
    /// Open-loop suboptimality of a policy on a validation set.
    Eval(EvalArgs),
    /// Closed-loop benchmark of several policies.
    Bench(BenchArgs),
    /// Random search over width, batch size and learning rate.
    Hpsearch(HpsearchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Phase1(_) => "phase1",
            Command::Rci(_) => "rci",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Bench(_) => "bench",
            Command::Hpsearch(_) => "hpsearch",
        }
    }
}

#[derive(Debug, Args)]
pub struct Phase1Args {
    /// States sampled from S for the certification report.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct RciArgs {
    /// Invariant set of the Phase I law instead of the maximal RCI set.
    #[arg(long)]
    pub feedback: bool,

    /// Keep every constraint of the feedback law this far from active.
    #[arg(long, default_value_t = 0.0)]
    pub margin: f64,

    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,

    /// Phase I law JSON for `--feedback`; the `[phase1]` table of the
    /// system file otherwise.
    #[arg(long)]
    pub phase1: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Small networks for a single core.
    Desk,
    /// The tuned full-size hyperparameters.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SquashArg {
    Tanh,
    Clamp,
}

impl From<SquashArg> for Squash {
    fn from(s: SquashArg) -> Self {
        match s {
            SquashArg::Tanh => Squash::Tanh,
            SquashArg::Clamp => Squash::Clamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Gauge,
    Penalty,
    Projection,
}

impl From<KindArg> for PolicyKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Gauge => PolicyKind::Gauge,
            KindArg::Penalty => PolicyKind::Penalty,
            KindArg::Projection => PolicyKind::Projection,
        }
    }
}

/// Training hyperparameters; explicit flags override the preset and the
/// config file.
#[derive(Debug, Args)]
pub struct TrainOptions {
    #[arg(long, value_enum, default_value = "gauge")]
    pub kind: KindArg,

    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,

    /// Training config as JSON; replaces the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub iterations: Option<usize>,

    #[arg(long)]
    pub width: Option<usize>,

    #[arg(long)]
    pub lr: Option<f64>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub beta: Option<f64>,

    #[arg(long)]
    pub n_val: Option<usize>,

    #[arg(long)]
    pub validate_every: Option<usize>,

    #[arg(long, value_enum)]
    pub squash: Option<SquashArg>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub opts: TrainOptions,

    /// Phase I law JSON, or `lp` for per-state LPs.
    #[arg(long)]
    pub phase1: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Weights written by `train`.
    #[arg(long, conflicts_with_all = ["oracle", "phase1_policy"])]
    pub weights: Option<PathBuf>,

    /// Evaluate the online MPC oracle itself.
    #[arg(long)]
    pub oracle: bool,

    /// Evaluate the bare Phase I interior point.
    #[arg(long)]
    pub phase1_policy: bool,

    #[arg(long, default_value_t = 100)]
    pub n_val: usize,

    /// Phase I law JSON, or `lp` for per-state LPs.
    #[arg(long)]
    pub phase1: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Weights written by `train`; may be repeated.
    #[arg(long)]
    pub weights: Vec<PathBuf>,

    /// Include the online MPC oracle.
    #[arg(long)]
    pub oracle: bool,

    /// Include the bare Phase I interior point.
    #[arg(long)]
    pub phase1_policy: bool,

    /// Trajectories per seed.
    #[arg(long, default_value_t = 100)]
    pub n_traj: usize,

    /// Closed-loop length.
    #[arg(long, default_value_t = 50)]
    pub steps: usize,

    /// Disturbance autocorrelation.
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,

    /// Comma-separated seeds; the master seed when absent.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,

    #[arg(long, default_value_t = 10)]
    pub warmup: usize,

    /// Validation states for the open-loop δ column; 0 skips it.
    #[arg(long, default_value_t = 100)]
    pub n_val: usize,

    /// Phase I law JSON, or `lp` for per-state LPs.
    #[arg(long)]
    pub phase1: Option<String>,
}

#[derive(Debug, Args)]
pub struct HpsearchArgs {
    #[command(flatten)]
    pub opts: TrainOptions,

    #[arg(long, default_value_t = 30)]
    pub trials: usize,

    /// Phase I law JSON, or `lp` for per-state LPs.
    #[arg(long)]
    pub phase1: Option<String>,
}

/// Outcome of a successful command.
#[derive(Debug, Clone)]
pub struct Report {
    pub run_dir: PathBuf,
    /// Printed by `--json`.
    pub summary: Value,
    /// Printed otherwise.
    pub text: String,
    /// Nonzero when the command ran to completion but found a problem, for
    /// example constraint violations of a safe policy.
    pub exit: Exit,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> CliResult<(Cli, Report)>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::usage(e.to_string()))?;
    let report = run(&cli)?;
    Ok((cli, report))
}

pub fn run(cli: &Cli) -> CliResult<Report> {
    if cli.threads == 0 {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    if cli.threads > 1 {
        log::info!("all stages are sequential; --threads {} has no effect", cli.threads);
    }
    commands::dispatch(cli)
}

/// Entry point shared by the binary: parse, run, print, and map to an exit
/// code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Usage.code() } else { Exit::Ok.code() };
        }
    };
    match run(&cli) {
        Ok(report) => {
            if cli.json {
                println!("{}", report.summary);
            } else {
                print!("{}", report.text);
                println!("artifacts in {}", report.run_dir.display());
            }
            report.exit.code()
        }
        Err(e) => {
            if cli.json {
                println!("{}", serde_json::json!({ "error": e.message, "exit": e.exit.code() }));
            }
            eprintln!("error: {e}");
            e.exit.code()
        }
    }
}
