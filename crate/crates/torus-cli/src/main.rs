//! `torus`: solve, inspect and export quasi-periodic tori.
//!
//! Exit codes: 0 success, 2 the solver did not converge, 3 bad configuration
//! or unreadable input.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "torus", version = torus::VERSION, about = "Quasi-periodic lower-dimensional tori of Hamiltonian lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Newton scheme and write solution.json, convergence.csv and conditions.csv.
    Solve(SolveArgs),
    /// Sample a solution on a time grid and write a CSV of (t, x_j, y_j, residual).
    Trajectory(TrajectoryArgs),
    /// Check admissibility of the model frequencies and estimate the excluded measure.
    Resonance(ResonanceArgs),
    /// Glue the inverse of L_N from local boxes and compare with a dense inverse.
    GlueCheck(GlueArgs),
    /// Report the Hamilton-equation residual of a solution.
    Verify(VerifyArgs),
    /// List the built-in models.
    Models,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Henon,
    Fpu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Uniform,
    ChainRule,
}

impl From<Variant> for torus::BVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Uniform => torus::BVariant::Uniform,
            Variant::ChainRule => torus::BVariant::ChainRule,
        }
    }
}

#[derive(Args, Clone, Debug)]
pub struct ModelArgs {
    /// Built-in model.
    #[arg(long, value_enum, default_value = "henon", conflicts_with = "model_file")]
    pub model: ModelKind,
    /// JSON model definition instead of a built-in model.
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    /// Number of FPU particles (default 3).
    #[arg(long)]
    pub n: Option<usize>,
    /// Perturbation strength; defaults to 0.5 for Hénon-Heiles and 1 for FPU.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// One amplitude per mode, zero for modes that are not excited.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub amplitudes: Option<Vec<f64>>,
}

#[derive(Args, Clone, Debug)]
pub struct ResonanceParams {
    #[arg(long, default_value_t = 2.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.05)]
    pub gamma: f64,
    /// Scans run over Λ_{2M}.
    #[arg(long = "scale-m", default_value_t = 10)]
    pub scale_m: usize,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub resonance: ResonanceParams,
    /// Box radii, one per iteration; the last is reused.
    #[arg(long, value_delimiter = ',')]
    pub schedule: Option<Vec<usize>>,
    #[arg(long, alias = "r-max", default_value_t = 40)]
    pub rmax: usize,
    /// Residual tolerance on ‖F‖₂.
    #[arg(long, alias = "tol-f", default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-13)]
    pub tol_step: f64,
    /// Weights of the convergence-control operator B.
    #[arg(long, value_enum, default_value = "chain-rule")]
    pub b_variant: Variant,
    /// Skip the per-step inverse-norm and localization checks.
    #[arg(long)]
    pub no_conditions: bool,
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrajectoryArgs {
    #[arg(long, alias = "model-state")]
    pub solution: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 2001)]
    pub points: usize,
    /// Explicit sample times; overrides --t-end and --points.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub times: Option<Vec<f64>>,
    /// Also write the states at the marker times to this CSV.
    #[arg(long)]
    pub markers: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,10,20")]
    pub marker_times: Vec<f64>,
    #[arg(long, short, default_value = "trajectory.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ResonanceArgs {
    /// Report admissibility of this model's frequencies.
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub amplitudes: Option<Vec<f64>>,
    #[command(flatten)]
    pub params: ResonanceParams,
    /// Scan domain for ω_T, one `lo:hi` per direction.
    #[arg(long, value_delimiter = ',')]
    pub domain: Option<Vec<String>>,
    /// Normal frequencies held fixed during a scan; defaults to the model's.
    #[arg(long, value_delimiter = ',')]
    pub omega_n: Option<Vec<f64>>,
    /// Points per direction of a uniform grid scan instead of Monte Carlo.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Per-point CSV of the scan.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GlueArgs {
    #[arg(long = "model-state", alias = "solution")]
    pub solution: PathBuf,
    #[arg(long = "N", default_value_t = 40)]
    pub n: usize,
    /// Inner radius; defaults to max(2, round(N^0.1)).
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Also write the JSON report here.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, alias = "model-state")]
    pub solution: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 2001)]
    pub points: usize,
    /// Also compare with an RK4 integration (dt = 1e-4) on [0, RK4_END].
    #[arg(long)]
    pub rk4_end: Option<f64>,
    /// Also write the JSON report here.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// Failure classes behind the exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    NotConverged(String),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Config(e.into())
    }
}

fn threads_from_env() -> Result<Option<usize>, Failure> {
    match std::env::var("TORUS_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| Failure::Config(anyhow::anyhow!("TORUS_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = threads_from_env()? {
        torus::init_threads(n);
    }
    match cli.command {
        Command::Solve(a) => commands::solve(&a),
        Command::Trajectory(a) => commands::trajectory(&a),
        Command::Resonance(a) => commands::resonance(&a),
        Command::GlueCheck(a) => commands::glue_check(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Models => commands::models(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NotConverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
