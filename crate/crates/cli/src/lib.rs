//! Command-line front end for the Fréchet wavelet distance.
//!
//! Exit codes:
//!
//! | code | meaning                      |
//! |------|------------------------------|
//! | 0    | success                      |
//! | 1    | usage error                  |
//! | 2    | data or dimension error      |
//! | 3    | insufficient samples         |
//! | 4    | fingerprint mismatch         |
//! | 5    | file format or version error |
//! | 6    | numerical error              |

mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fwd_core::Error;

pub use commands::format_sig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_SAMPLES: i32 = 3;
pub const EXIT_FINGERPRINT: i32 = 4;
pub const EXIT_FORMAT: i32 = 5;
pub const EXIT_NUMERICAL: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "fwd", version, about = "Fréchet wavelet distance between image sets")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "FWD_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute and cache the packet statistics of an image directory.
    Stats(StatsArgs),
    /// Compare a reference and a candidate (directories or statistics caches).
    Compute(ComputeArgs),
    /// Compare perturbed copies of a directory against a reference.
    Sweep(SweepArgs),
    /// Inspect a report written by `compute`.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResizeMode {
    None,
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    /// Replicate grayscale images into three channels.
    #[arg(long)]
    pub replicate_gray: bool,

    /// Resampling applied to every image before the transform.
    #[arg(long, value_enum, default_value = "none", requires_if("nearest", "size"), requires_if("bilinear", "size"))]
    pub resize: ResizeMode,

    /// Target size for --resize, as HEIGHTxWIDTH.
    #[arg(long, value_parser = parse_size)]
    pub size: Option<(u32, u32)>,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Transform depth; defaults by resolution (256: 4, 128: 3, 64: 2).
    #[arg(long)]
    pub level: Option<u32>,

    /// Images decoded and transformed per batch.
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,

    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    pub dir: PathBuf,

    /// Output cache file.
    #[arg(long, short)]
    pub out: PathBuf,

    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct ComputeArgs {
    pub reference: PathBuf,
    pub candidate: PathBuf,

    #[command(flatten)]
    pub pipeline: PipelineArgs,

    /// Report JSON path.
    #[arg(long, short, default_value = "fwd-report.json")]
    pub out: PathBuf,

    /// Per-packet mean difference map as CSV.
    #[arg(long)]
    pub diff_csv: Option<PathBuf>,

    /// Per-packet mean difference map as JSON.
    #[arg(long)]
    pub diff_json: Option<PathBuf>,

    /// Add OFFSET * I to both covariances (1e-6 when given without a value).
    #[arg(long, value_name = "OFFSET", num_args = 0..=1, default_missing_value = "1e-6")]
    pub eps_offset: Option<f64>,

    /// Leave the timestamp out of the report.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Blur,
    Noise,
    Jpeg,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub reference: PathBuf,
    pub dir: PathBuf,

    #[arg(long, value_enum)]
    pub kind: KindArg,

    /// Comma-separated intensities (blur sigma, noise amplitude or JPEG quality).
    #[arg(long, required = true, value_delimiter = ',', num_args = 1..)]
    pub grid: Vec<f64>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Directory receiving curve.csv and one report per grid point.
    #[arg(long, default_value = "sweep")]
    pub out_dir: PathBuf,

    #[command(flatten)]
    pub pipeline: PipelineArgs,

    #[arg(long, value_name = "OFFSET", num_args = 0..=1, default_missing_value = "1e-6")]
    pub eps_offset: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub report: PathBuf,

    /// Number of packets to list, largest distance first (all by default).
    #[arg(long)]
    pub top: Option<usize>,

    /// Show log10 of the distances.
    #[arg(long)]
    pub log: bool,

    /// Write per-packet distances as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,

    /// Write the distances arranged as the packet mosaic grid.
    #[arg(long)]
    pub grid_csv: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HEIGHTxWIDTH, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
    let (h, w) = (parse(h)?, parse(w)?);
    if h == 0 || w == 0 {
        return Err("size must be positive".into());
    }
    Ok((h, w))
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
    Output { path: PathBuf, source: std::io::Error },
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Output { path, source } => write!(f, "cannot write {}: {source}", path.display()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Output { .. } => EXIT_DATA,
            CliError::Core(e) => match e {
                Error::Parameter(_) => EXIT_USAGE,
                Error::InsufficientSamples { .. } | Error::EmptyDataset(_) => EXIT_SAMPLES,
                Error::FingerprintMismatch { .. } => EXIT_FINGERPRINT,
                Error::FormatVersion { .. } | Error::Checksum(_) | Error::Format(_) => EXIT_FORMAT,
                Error::Numerical { .. } | Error::NonFinite(_) => EXIT_NUMERICAL,
                _ => EXIT_DATA,
            },
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => builder = builder.num_threads(n),
        None => {}
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))?;
    let mut out_buf = Vec::new();
    let mut err_buf = Vec::new();
    let result = pool.install(|| match cli.command {
        Command::Stats(args) => commands::stats(&args, &mut out_buf),
        Command::Compute(args) => commands::compute(&args, &mut out_buf, &mut err_buf),
        Command::Sweep(args) => commands::sweep(&args, &mut out_buf),
        Command::Report(args) => commands::report(&args, &mut out_buf),
    });
    let _ = out.write_all(&out_buf);
    let _ = err.write_all(&err_buf);
    result
}
