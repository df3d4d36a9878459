//! `specdiff`: analyze datasets, train the builtin denoiser, sample, and run
//! the verification suite.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spectral_diffusion::io::DirLayout;
use spectral_diffusion::Error;

#[derive(Parser, Debug)]
#[command(
    name = "specdiff",
    version,
    about = "Feature-preserving diffusion in the spectral domain"
)]
struct Cli {
    /// Seed for every random stream (required by train and sample).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for batch transforms and independent trajectories.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress and summaries on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit spectral statistics and report invariant components.
    Analyze(AnalyzeArgs),
    /// Train the builtin denoiser from a run config.
    Train(TrainArgs),
    /// Draw samples from a trained checkpoint.
    Sample(SampleArgs),
    /// Check the distributional identities against independent oracles.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// IDX image file (optionally gzipped) or a directory of PGM/PPM files.
    #[arg(long)]
    pub data: PathBuf,
    /// IDX label file matching `--data`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Directory layout when `--data` is a directory.
    #[arg(long, value_enum, default_value_t = Layout::Flat)]
    pub layout: Layout,
    /// Zero-pad IDX images symmetrically to this square size.
    #[arg(long)]
    pub pad_to: Option<usize>,
    /// Also fit one set of statistics per label.
    #[arg(long)]
    pub per_class: bool,
    /// Standard deviation at or below which a component counts as invariant.
    #[arg(long, default_value_t = 1e-3)]
    pub threshold: f64,
    /// Radial bins; defaults to half the smaller image side.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Stats JSON to write; the CSV and fit files go next to it.
    #[arg(long, default_value = "stats.json")]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Layout {
    Flat,
    PerClass,
}

impl From<Layout> for DirLayout {
    fn from(l: Layout) -> Self {
        match l {
            Layout::Flat => DirLayout::Flat,
            Layout::PerClass => DirLayout::PerClass,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Stats JSON written by `analyze` or `train`.
    #[arg(long)]
    pub stats: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Use the statistics entry with this label.
    #[arg(long)]
    pub label: Option<String>,
    /// Sample on a fresh cosine schedule with this many steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Schedule JSON; defaults to `schedule.json` beside the checkpoint.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Also write intermediate states of every trajectory.
    #[arg(long)]
    pub trajectory: bool,
    #[arg(long, value_enum, default_value_t = Baseline::Inspect)]
    pub baseline: Baseline,
    /// Output directory.
    #[arg(long, default_value = "samples")]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    /// Spectral sampler started from the class statistics.
    Inspect,
    /// White-noise pixel-space sampler.
    Ddpm,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value = "all", value_parser = ["all", "forward", "posterior", "terminal", "drift"])]
    pub suite: String,
    /// Also write the JSON-lines report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Everything that can end a run early, in exit-code order.
#[derive(Debug)]
pub enum Failure {
    /// A verification check did not pass.
    Check(String),
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Lib(e) => match e {
                Error::Io { .. }
                | Error::Json(_)
                | Error::BadMagic { .. }
                | Error::Truncated { .. }
                | Error::CountMismatch { .. }
                | Error::UnsupportedFormat(_)
                | Error::Malformed { .. } => 3,
                Error::InvalidParameter(_)
                | Error::ShapeMismatch { .. }
                | Error::OddDimension { .. }
                | Error::NoChannels { .. }
                | Error::TooFewSamples { .. } => 2,
                _ => 1,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Check(m) | Failure::Usage(m) => f.write_str(m),
            Failure::Lib(e) => write!(f, "{e}"),
        }
    }
}

pub struct Globals {
    pub seed: Option<u64>,
    pub quiet: bool,
}

impl Globals {
    pub fn require_seed(&self, command: &str) -> Result<u64, Failure> {
        self.seed
            .ok_or_else(|| Failure::Usage(format!("{command} needs --seed")))
    }

    pub fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("global pool is configured once");
    }
    let globals = Globals {
        seed: cli.seed,
        quiet: cli.quiet,
    };
    let result = match &cli.command {
        Command::Analyze(a) => commands::analyze(a, &globals),
        Command::Train(a) => commands::train(a, &globals),
        Command::Sample(a) => commands::sample(a, &globals),
        Command::Verify(a) => commands::verify(a, &globals),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
