use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use coevo_core::coevo::BaselineMode;
use coevo_core::selectors::SelectorKind;

/// Every flag can also be set through a `COEVO_`-prefixed environment
/// variable, e.g. `COEVO_SEED=3` or `COEVO_SELECTOR=dyb4`.
#[derive(Debug, Clone, Parser)]
#[command(name = "coevo", version, about = "Label-free co-evolution experiments on passing matrices")]
pub struct Cli {
    /// Worker threads for per-problem work (default: available processors).
    #[arg(long, global = true, env = "COEVO_JOBS")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Run a selector on every matrix in a file.
    Select(SelectArgs),
    /// Print ids of matrices whose rank is at least tau.
    Filter(FilterArgs),
    /// Grid-search the B4 prior on a labeled calibration set.
    Calibrate(CalibrateArgs),
    /// Run a co-evolution experiment or baseline into a run directory.
    Train(TrainArgs),
    /// Export plotting tables from a finished run directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PriorArgs {
    #[arg(long, env = "COEVO_BETA0_EXP", allow_hyphen_values = true)]
    pub beta0_exp: Option<i32>,
    #[arg(long, env = "COEVO_ALPHA_XY_EXP", allow_hyphen_values = true)]
    pub alpha_xy_exp: Option<i32>,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    /// Line-delimited matrix records.
    pub matrices: PathBuf,
    #[arg(long, env = "COEVO_SELECTOR", default_value = "codet")]
    pub selector: SelectorKind,
    #[command(flatten)]
    pub prior: PriorArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FilterArgs {
    pub matrices: PathBuf,
    #[arg(long, env = "COEVO_TAU", default_value_t = 2)]
    pub tau: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub matrices: PathBuf,
    /// Line-delimited `{"problem_id", "reference_solution", "reference_tests"}` records.
    #[arg(long)]
    pub calibration_set: PathBuf,
    /// Source texts by artifact id, required with an external executor.
    #[arg(long)]
    pub sources: Option<PathBuf>,
    /// World configuration for the synthetic executor.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "COEVO_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "COEVO_EXECUTOR", default_value = "synthetic")]
    pub executor: ExecutorSpec,
    #[arg(long, env = "COEVO_TIMEOUT_MS", default_value_t = 2000)]
    pub timeout_ms: u64,
    /// Also write the full accuracy surface as CSV.
    #[arg(long)]
    pub surface: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// TOML file with `[train]` and `[world]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory to create or overwrite.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "COEVO_SELECTOR")]
    pub selector: Option<SelectorKind>,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[arg(long, env = "COEVO_TAU")]
    pub tau: Option<usize>,
    #[arg(long, env = "COEVO_STEPS")]
    pub steps: Option<usize>,
    #[arg(long, env = "COEVO_ROLLOUTS")]
    pub rollouts: Option<usize>,
    #[arg(long, env = "COEVO_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "COEVO_BASELINE")]
    pub baseline: Option<BaselineMode>,
    #[arg(long, env = "COEVO_EXECUTOR", default_value = "synthetic")]
    pub executor: ExecutorSpec,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    pub run_dir: PathBuf,
    /// Output directory (default: `<run_dir>/report`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecutorSpec {
    Synthetic,
    External(String),
}

impl FromStr for ExecutorSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "synthetic" {
            return Ok(Self::Synthetic);
        }
        match s.strip_prefix("external:") {
            Some(cmd) if !cmd.trim().is_empty() => Ok(Self::External(cmd.to_owned())),
            _ => Err(format!("unknown executor `{s}` (expected synthetic or external:<command>)")),
        }
    }
}
