//! Command-line driver for the `fastslow` library.
//!
//! Every subcommand accepts its flags from argv and, optionally, from a TOML
//! file passed with `--config`. Top-level keys of the file apply to every
//! subcommand; a table named after the subcommand overrides them. Flags given
//! on the command line always win.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod repro;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "FASTSLOW_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
    #[error("cli: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) | CliError::Io(_) => 1,
        }
    }
}

pub(crate) fn domain<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Domain(e.to_string())
}

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(format!("cli: {}", msg.into()))
}

#[derive(Debug, Parser)]
#[command(
    name = "fastslow",
    version,
    about = "Fast-slow reaction network analysis"
)]
pub struct Cli {
    /// TOML file with default flag values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for outputs written without an explicit `--out`.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Conservation structure, validation and fast detailed balance as JSON.
    Analyze(AnalyzeArgs),
    /// Integrate the full or effective dynamics to CSV.
    Simulate(SimulateArgs),
    /// Reconstruct a point of the slow manifold.
    Reconstruct(ReconstructArgs),
    /// Evaluate a Hamiltonian or Lagrangian.
    Eval(EvalArgs),
    /// Minimize the action for one endpoint.
    Action(ActionArgs),
    /// Value gaps over a list of ε.
    Sweep(SweepArgs),
    /// Solve the Hamilton-Jacobi equation on a grid.
    Hje(HjeArgs),
    /// Run the acceptance checks and print a summary table.
    Repro(ReproArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analyze(_) => "analyze",
            Command::Simulate(_) => "simulate",
            Command::Reconstruct(_) => "reconstruct",
            Command::Eval(_) => "eval",
            Command::Action(_) => "action",
            Command::Sweep(_) => "sweep",
            Command::Hje(_) => "hje",
            Command::Repro(_) => "repro",
        }
    }
}

/// A network file, a shipped network name, or inline network text.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct NetworkArg {
    pub network: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetworkArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetworkArg,
    /// Timescale separation for the full dynamics.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    /// full, projected, coarse or lagrange.
    #[arg(long)]
    pub mode: Option<String>,
    /// Initial state, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, deserialize_with = "config::list")]
    pub x0: Option<String>,
    /// Number of output intervals.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ReconstructArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetworkArg,
    /// Fast-conserved coordinates.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, deserialize_with = "config::list")]
    pub q: Option<String>,
    /// A state whose coordinates `Q_fast x` are reconstructed.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, deserialize_with = "config::list")]
    pub x: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetworkArg,
    /// Heps, Leps, Heff, Leff, Hcg or Lcg.
    #[arg(long = "fn")]
    #[serde(rename = "fn")]
    pub function: Option<String>,
    /// State (species coordinates, or `q` for the coarse functions).
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, deserialize_with = "config::list")]
    pub x: Option<String>,
    /// Momentum for Hamiltonians.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, deserialize_with = "config::list")]
    pub p: Option<String>,
    /// Velocity for Lagrangians.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, deserialize_with = "config::list")]
    pub v: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Options shared by `action` and `sweep`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct PathProblemArgs {
    /// Endpoint state, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(default, deserialize_with = "config::list")]
    pub x_end: Option<String>,
    #[arg(long)]
    pub t_final: Option<f64>,
    /// Time steps of the discrete path.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Box as `lo:hi` for every axis or a comma list of per-axis `lo:hi`.
    #[arg(long = "box")]
    #[serde(rename = "box")]
    pub domain: Option<String>,
    /// zero, const:<c>, quadratic:<center> or coarse:<q-center>.
    #[arg(long)]
    pub u0: Option<String>,
    #[arg(long)]
    pub u0_weight: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Additional random straight-line starts.
    #[arg(long)]
    pub random_starts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ActionArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetworkArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub problem: PathProblemArgs,
    /// Timescale separation; the effective action is minimized when absent.
    #[arg(long)]
    pub eps: Option<f64>,
    /// CSV of the optimal path.
    #[arg(long)]
    pub path_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetworkArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub problem: PathProblemArgs,
    /// Comma-separated ε values.
    #[arg(long)]
    #[serde(default, deserialize_with = "config::list")]
    pub eps: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct HjeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetworkArg,
    /// eps (species lattice) or coarse (lattice in `q`).
    #[arg(long)]
    pub mode: Option<String>,
    /// Comma-separated ε values (eps mode).
    #[arg(long)]
    #[serde(default, deserialize_with = "config::list")]
    pub eps: Option<String>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    /// Box as `lo:hi` for every axis or a comma list of per-axis `lo:hi`.
    #[arg(long = "box")]
    #[serde(rename = "box")]
    pub domain: Option<String>,
    /// zero, const:<c>, quadratic:<center> or coarse:<q-center>.
    #[arg(long)]
    pub u0: Option<String>,
    #[arg(long)]
    pub u0_weight: Option<f64>,
    #[arg(long)]
    pub cfl: Option<f64>,
    /// Node CSV; written to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON diagnostics.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ReproArgs {
    /// Comma-separated criterion numbers; all when absent.
    #[arg(long)]
    #[serde(default, deserialize_with = "config::list")]
    pub only: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON summary.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Sizes the global worker pool from the environment.
pub fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_threads();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => Some(config::load(path)?),
        None => None,
    };
    let name = cli.command.name();
    let ctx = commands::Context {
        out_dir: cli.out_dir.clone(),
        command: name,
    };
    match &cli.command {
        Command::Analyze(a) => commands::analyze(&ctx, layered(a, file.as_ref(), name)?),
        Command::Simulate(a) => commands::simulate(&ctx, layered(a, file.as_ref(), name)?),
        Command::Reconstruct(a) => commands::reconstruct(&ctx, layered(a, file.as_ref(), name)?),
        Command::Eval(a) => commands::eval(&ctx, layered(a, file.as_ref(), name)?),
        Command::Action(a) => commands::action(&ctx, layered(a, file.as_ref(), name)?),
        Command::Sweep(a) => commands::sweep(&ctx, layered(a, file.as_ref(), name)?),
        Command::Hje(a) => commands::hje(&ctx, layered(a, file.as_ref(), name)?),
        Command::Repro(a) => commands::repro(&ctx, layered(a, file.as_ref(), name)?),
    }
}

fn layered<T>(args: &T, file: Option<&serde_json::Value>, command: &str) -> Result<T, CliError>
where
    T: Serialize + serde::de::DeserializeOwned,
{
    let value = serde_json::to_value(args).map_err(|e| usage(e.to_string()))?;
    match file {
        Some(f) => config::from_value(config::merge(value, f, command)),
        None => config::from_value(value),
    }
}
