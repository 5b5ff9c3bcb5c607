//! Command-line front end for evofuse.
//!
//! Exit codes: 0 on success, 2 on usage errors (bad flags, missing inputs),
//! 1 when a command fails at runtime.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
pub mod inputs;
pub mod output;

/// Environment variable overriding configuration seeds.
pub const SEED_ENV: &str = "EVOFUSE_SEED";

#[derive(Debug, Parser)]
#[command(name = "evofuse", version, about = "Evolutionary loss weighting for infrared/visible fusion")]
pub struct Cli {
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply the discriminative enhancer to a grayscale image.
    Enhance(EnhanceArgs),
    /// Run the cross-dimensional embedding block on a patch.
    DemoCde(DemoCdeArgs),
    /// Evaluate every loss component for a fused image.
    Losses(LossesArgs),
    /// Run the genetic search on a synthetic or fusion objective.
    Evolve(EvolveArgs),
    /// Cooperative run: genetic search over fusion loss weights plus the
    /// experience/equals/evolved comparison.
    Coop(CoopArgs),
    /// Fusion quality metrics (MI, SSIM, VIF, Qabf).
    Metrics(MetricsArgs),
    /// Fuse one pair with a fixed genome.
    Fuse(FuseArgs),
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long = "in", value_name = "IMAGE")]
    pub input: PathBuf,
    #[arg(long, value_name = "IMAGE")]
    pub out: PathBuf,
    /// Also print modulation statistics as JSON.
    #[arg(long)]
    pub stats: bool,
}

#[derive(Debug, Args)]
pub struct DemoCdeArgs {
    #[arg(long)]
    pub ir: PathBuf,
    #[arg(long)]
    pub vis: PathBuf,
    /// Raw little-endian f32 detection features, channel-major. Shape is read
    /// from a sidecar JSON file with the same stem.
    #[arg(long)]
    pub det: PathBuf,
    /// Image-space crop `top,left,height,width`.
    #[arg(long, value_name = "T,L,H,W")]
    pub patch: String,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = 8)]
    pub d_model: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for `cde.bin` and `cde.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LossesArgs {
    #[arg(long)]
    pub fused: PathBuf,
    #[arg(long)]
    pub ir: PathBuf,
    #[arg(long)]
    pub vis: PathBuf,
    /// Detection samples: array of {pred, gt, logits, labels[, dfl]}.
    #[arg(long)]
    pub boxes: Option<PathBuf>,
    /// Seven comma-separated coefficients (default: all ones).
    #[arg(long)]
    pub genome: Option<String>,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    /// Separable quadratic objective with a known grid optimum.
    Synthetic,
    /// Mean inner-loop fusion loss over a pair directory.
    Fusion,
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub task: Task,
    /// Pair directory (fusion task).
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Inner-loop settings (fusion task; defaults apply when omitted).
    #[arg(long)]
    pub inner: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CoopArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub evo: PathBuf,
    #[arg(long)]
    pub inner: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip the quality metrics.
    #[arg(long)]
    pub no_metrics: bool,
    #[arg(long, default_value_t = evofuse_core::metrics::DEFAULT_MI_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long, required_unless_present = "dir", conflicts_with = "dir")]
    pub fused: Option<PathBuf>,
    #[arg(long, required_unless_present = "dir")]
    pub ir: Option<PathBuf>,
    #[arg(long, required_unless_present = "dir")]
    pub vis: Option<PathBuf>,
    /// Directory of `<name>_fused`, `<name>_ir`, `<name>_vis` triples.
    #[arg(long)]
    pub dir: Option<PathBuf>,
    #[arg(long, default_value_t = evofuse_core::metrics::DEFAULT_MI_BINS)]
    pub bins: usize,
    /// Write JSON/CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub ir: PathBuf,
    #[arg(long)]
    pub vis: PathBuf,
    /// Labeled boxes for the detection surrogate: array of {gt: [cx, cy, w, h]}.
    #[arg(long)]
    pub boxes: Option<PathBuf>,
    /// Seven comma-separated coefficients (default: all ones).
    #[arg(long)]
    pub genome: Option<String>,
    #[arg(long)]
    pub inner: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fused image (.png or .pgm).
    #[arg(long)]
    pub out: PathBuf,
}

/// Why a command did not finish.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<evofuse_core::Error> for Failure {
    fn from(e: evofuse_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}
