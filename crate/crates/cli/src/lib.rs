//! Command-line workflows: power flow, eigen-analysis, stability screening,
//! adaptive manifold sampling, gain tuning, plotting and case matrices.

pub mod commands;
pub mod manifest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ssm_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("infeasible: {0}")]
    Infeasible(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 validation, 3 numerical failure, 4 infeasible.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_validation() || matches!(e, ssm_core::Error::Io(_)) => 2,
            CliError::Core(_) => 3,
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Infeasible(_) => 4,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug, Clone, Serialize)]
#[command(
    name = "ssm",
    version,
    about = "Small-signal stability manifolds of inverter-rich power systems"
)]
pub struct Cli {
    /// Seed of every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; all outputs are independent of this value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Solve the power flow of one scenario.
    Powerflow(PowerflowArgs),
    /// Dump the state matrix and its spectrum.
    Eigs(EigsArgs),
    /// Screen a gain assignment over all scenarios.
    Stability(StabilityArgs),
    /// Adaptive sampling of the stability manifold over a gain pair.
    Asm(AsmArgs),
    /// Tune controller gains over connection combinations and scenarios.
    Tune(TuneArgs),
    /// Render a manifold plot from model and grid files.
    Report(ReportArgs),
    /// Run the adaptive sampling over every case of a case matrix.
    CaseMatrix(CaseMatrixArgs),
}

/// Network inputs shared by the analysis commands.
#[derive(Args, Debug, Clone, Serialize)]
pub struct NetArgs {
    /// Network file (JSON).
    #[arg(long)]
    pub net: PathBuf,
    /// Scenario set or scenario synthesis spec (JSON); base case when absent.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Synchronous generators to replace by aggregated IBRs.
    #[arg(long, value_delimiter = ',')]
    pub replace: Vec<String>,
    /// IBR template for replacements (JSON); reference unit when absent.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Tuned gains written to every IBR (output of `tune` or a name→value map).
    #[arg(long)]
    pub tuned: Option<PathBuf>,
}

/// Focus devices and the gains written to them.
#[derive(Args, Debug, Clone, Serialize)]
pub struct FocusArgs {
    /// IBRs whose gains are set; every IBR when absent.
    #[arg(long, value_delimiter = ',')]
    pub focus: Vec<String>,
    /// Gains as name=value,... written to the focus IBRs.
    #[arg(long)]
    pub params: Option<String>,
    /// Analyse the Thévenin equivalent seen from this bus.
    #[arg(long)]
    pub thevenin: Option<String>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PowerflowArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Scenario name; the first scenario when absent.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EigsArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub focus: FocusArgs,
    #[arg(long)]
    pub scenario: Option<String>,
    /// Output prefix: writes PREFIX_a.csv and PREFIX_spectrum.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub focus: FocusArgs,
    /// Stability requires every abscissa below -margin.
    #[arg(long, default_value_t = 0.0)]
    pub margin: f64,
}

/// Adaptive sampling settings.
#[derive(Args, Debug, Clone, Serialize)]
pub struct SamplingArgs {
    /// Varied gain pair.
    #[arg(long, value_delimiter = ',', default_value = "kp_pll,ki_pll")]
    pub pair: Vec<String>,
    /// lo1,hi1,lo2,hi2; tuning bounds of the pair when absent.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub domain: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub ninit: usize,
    #[arg(long, default_value_t = 250)]
    pub na: usize,
    #[arg(long, default_value_t = 20_000)]
    pub nr: usize,
    #[arg(long, default_value_t = 0.8)]
    pub pth: f64,
    /// Refinement rounds sharing the NA budget.
    #[arg(long, default_value_t = 1)]
    pub rounds: usize,
    /// Grid nodes per axis of the exported manifold.
    #[arg(long, default_value_t = 101)]
    pub grid: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AsmArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub focus: FocusArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Also write PREFIX_plot.svg.
    #[arg(long)]
    pub plot: bool,
    /// Output prefix.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TuneArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Replacement combinations "G1,G2;G3"; the network as given when absent.
    #[arg(long)]
    pub connections: Option<String>,
    /// Use every non-empty subset of the generators named in --connections.
    #[arg(long)]
    pub all_combinations: bool,
    /// Gains held fixed as name=value,...; the rest are tuned.
    #[arg(long)]
    pub fix: Option<String>,
    #[arg(long, default_value_t = 500)]
    pub budget: usize,
    /// Points evaluated per optimizer iteration.
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// Required damping: alpha_max <= -eps.
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value = "tuned.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReportArgs {
    /// Model file written by `asm`.
    #[arg(long)]
    pub model: PathBuf,
    /// Grid file written by `asm`.
    #[arg(long)]
    pub grid: PathBuf,
    /// Tuned gains marked by a star.
    #[arg(long)]
    pub tuned: Option<PathBuf>,
    #[arg(long)]
    pub title: Option<String>,
    /// Output SVG.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CaseMatrixArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Case matrix file (JSON).
    #[arg(long)]
    pub cases: PathBuf,
    /// Tuned gains written by `tune`.
    #[arg(long)]
    pub tuned: PathBuf,
    /// Run only these cases.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<String>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

/// Run a parsed command line and return the text for standard output.
pub fn run(cli: &Cli) -> CliResult<String> {
    match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?
            .install(|| commands::dispatch(cli)),
        None => commands::dispatch(cli),
    }
}
