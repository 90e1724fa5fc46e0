//! The `pds` command line: mask building, sampling, verification suites,
//! α fitting and overhead benchmarks.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pds_core::alpha::FitVariant;
use pds_core::ingest::{DatasetFormat, ValueScaling};
use pds_core::{PdsError, SolenoidalKind};

pub mod bench;
pub mod commands;
pub mod config;
pub mod verify;

use config::{LawArg, OrderArg};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] PdsError),
    #[error("{0} chain(s) diverged")]
    Diverged(usize),
    #[error("{0} check(s) failed")]
    VerificationFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(PdsError::Divergence { .. }) | CliError::Diverged(_) => 3,
            CliError::Core(_) => 2,
            CliError::VerificationFailed(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pds", version, about = "Preconditioned diffusion sampling with analytic score oracles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command. Flags win over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Number of iterations.
    #[arg(long = "T")]
    pub t: Option<usize>,
    /// Iteration-reduction factor `c`: `T/c` iterations with steps scaled by `√c`.
    #[arg(long)]
    pub accel: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long, value_enum)]
    pub gradient_order: Option<OrderArg>,
    #[arg(long, value_enum)]
    pub initial_law: Option<LawArg>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build frequency and pixel masks from a dataset directory.
    BuildMasks(BuildMasksArgs),
    /// Run the sampler on a configured target.
    Sample(SampleArgs),
    /// Run a named verification suite.
    Verify(VerifyArgs),
    /// Fit the α–T law from a two-column observation file.
    FitAlpha(FitAlphaArgs),
    /// Time vanilla against preconditioned iterations.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MaskKinds {
    Both,
    Frequency,
    Pixel,
}

#[derive(Debug, Args)]
pub struct BuildMasksArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of `.pdst` tensors or `.pgm`/`.ppm` images.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "pdst")]
    pub format: FormatArg,
    #[arg(long, value_enum, default_value = "unit")]
    pub scaling: ScalingArg,
    /// Number of images drawn (without replacement) for the statistics.
    #[arg(long, default_value_t = 200)]
    pub subsample: usize,
    #[arg(long, value_enum, default_value = "both")]
    pub kind: MaskKinds,
    /// Observation file for the α–T law; used with `--T` when `--alpha` is absent.
    #[arg(long)]
    pub alpha_fit: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FormatArg {
    Pdst,
    Pixmap,
}

impl From<FormatArg> for DatasetFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Pdst => DatasetFormat::RawTensor,
            FormatArg::Pixmap => DatasetFormat::Pixmap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ScalingArg {
    Unit,
    Signed,
    Byte,
}

impl From<ScalingArg> for ValueScaling {
    fn from(s: ScalingArg) -> Self {
        match s {
            ScalingArg::Unit => ValueScaling::Unit,
            ScalingArg::Signed => ValueScaling::Signed,
            ScalingArg::Byte => ValueScaling::Byte,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum VariantArg {
    BothMasks,
    FreqOnly,
}

impl From<VariantArg> for FitVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::BothMasks => FitVariant::BothMasks,
            VariantArg::FreqOnly => FitVariant::FreqOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Also write one PGM per sample and channel.
    #[arg(long)]
    pub pgm: bool,
    /// Record per-iteration `V_coo`/`R_coo` traces.
    #[arg(long)]
    pub trace: bool,
    /// `shift:M:N`, `fourier_shift:M:N` or `fourier_antisym`.
    #[arg(long, value_parser = config::parse_solenoidal)]
    pub solenoidal: Option<SolenoidalKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Suite {
    Adjoint,
    Skew,
    Invariance,
    SteadyState,
    FinalState,
    OracleDft,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(value_enum)]
    pub suite: Suite,
}

#[derive(Debug, Args)]
pub struct FitAlphaArgs {
    #[command(flatten)]
    pub common: Common,
    /// Two columns `T alpha` per line; `#` starts a comment.
    pub observations: PathBuf,
    #[arg(long, value_enum, default_value = "freq_only")]
    pub variant: VariantArg,
    /// Iteration counts to predict α for (comma separated).
    #[arg(long = "predict-T", value_delimiter = ',')]
    pub predict_t: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// `C,H,W`
    #[arg(long, default_value = "3,256,256", value_parser = parse_shape_arg)]
    pub shape: [usize; 3],
    /// Wall-clock cost of one score evaluation.
    #[arg(long, default_value_t = 32.0)]
    pub cost_ms: f64,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
}

fn parse_shape_arg(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| format!("{s}: {e}"))).collect::<Result<_, _>>()?;
    <[usize; 3]>::try_from(v).map_err(|_| format!("{s}: expected C,H,W"))
}

/// Caps the worker pool from `PDS_THREADS` when set.
fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("PDS_THREADS") {
        let n: usize = v.parse().map_err(|_| CliError::Usage(format!("PDS_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CliError::Usage("PDS_THREADS must be >= 1".into()));
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = configure_threads().and_then(|_| match cli.command {
        Command::BuildMasks(a) => commands::build_masks(&a),
        Command::Sample(a) => commands::sample(&a),
        Command::Verify(a) => verify::run(&a),
        Command::FitAlpha(a) => commands::fit_alpha(&a),
        Command::Bench(a) => bench::run(&a),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
