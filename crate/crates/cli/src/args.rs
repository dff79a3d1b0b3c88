use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "laguerre",
    version,
    about = "Laguerre tessellations with prescribed cell areas and centroids"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate Voronoi target data, or a synthetic label grid with --grid.
    Synth(SynthArgs),
    /// Recover the diagram generating the data by maximising H.
    Recover(SolveArgs),
    /// Fit a diagram to the data by minimising the centroid error.
    Fit(SolveArgs),
    /// Solve for weights giving the target areas with seeds at the target centroids.
    OtSolve(SolveArgs),
    /// Run the necessary-condition checks on target data.
    Check(CheckArgs),
    /// Convert a label grid into target data.
    Ingest(IngestArgs),
    /// Recover an anisotropic diagram on a pixel grid.
    AnisoRecover(AnisoArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Target data CSV with header `v,bx,by`.
    #[arg(long, value_name = "CSV", conflicts_with = "grid")]
    pub data: Option<PathBuf>,
    /// Label grid; its extent gives the domain unless --domain is set.
    #[arg(long, value_name = "TXT")]
    pub grid: Option<PathBuf>,
    /// Rectangle `[0,w]×[0,h]`; defaults to the unit square for CSV input.
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    pub domain: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Diagram JSON; the trace CSV goes next to it as `<stem>.trace.csv`.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Trace CSV, overriding the path derived from --out.
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuningArgs {
    /// Minimum seed separation.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Radius of the ball confining the seeds during recovery.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Absolute stopping tolerance on the objective change.
    #[arg(long)]
    pub ftol: Option<f64>,
    #[arg(long, value_name = "N")]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// RNG seed for the random initial seeds of `recover`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "N")]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    pub domain: Option<Vec<f64>>,
    /// Perturb the centroids by up to this distance.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    /// Write a synthetic label grid here instead of target data; needs
    /// --resolution and a square domain.
    #[arg(long, value_name = "TXT")]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Target data CSV; printed to stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Report JSON; printed to stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_name = "TXT")]
    pub grid: PathBuf,
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    pub domain: Option<Vec<f64>>,
    /// Target data CSV; printed to stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnisoArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// JSON array of symmetric positive-definite 2×2 matrices, one per
    /// cell; identity matrices when absent.
    #[arg(long, value_name = "JSON")]
    pub matrices: Option<PathBuf>,
    /// Pixels along each side of the bounding box.
    #[arg(long, default_value_t = 512)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
