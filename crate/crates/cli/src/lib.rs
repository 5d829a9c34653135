//! Command-line front end: dataset building, two-stage training, detection,
//! QF-sweep evaluation, operator application and JPEG simulation.
//!
//! Every artifact-producing command writes a `.manifest` companion file
//! (tool version, resolved configuration, config hash, seed, input/output
//! hashes, timestamp). Artifacts themselves contain no timestamps: the same
//! configuration, seed and inputs reproduce them byte for byte.
//!
//! Exit codes: 0 success, 2 usage error, 3 configuration/schema violation,
//! 4 missing or malformed input, 5 processing failure.

mod commands;
mod config;
mod manifest;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_MISSING_INPUT: i32 = 4;
pub const EXIT_PROCESSING: i32 = 5;

/// Detector toolkit for generic contrast/tonal adjustment, robust to JPEG
/// recompression.
#[derive(Parser, Debug)]
#[command(name = "tonedetect", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a deterministic synthetic image corpus.
    Synth(SynthArgs),
    /// Build a leakage-safe dataset index over a directory of images.
    Dataset(DatasetArgs),
    /// Train the patch classifier (unaware stage or JPEG-aware fine-tuning).
    Train(TrainArgs),
    /// Score one image and emit a detection report.
    Detect(DetectArgs),
    /// Sweep operators and JPEG quality factors on the test split.
    Eval(EvalArgs),
    /// Apply a tonal adjustment operator to an image.
    Op(OpArgs),
    /// JPEG round-trip simulator (pixel effect only, no file emission).
    Jpegsim(JpegsimArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory the PNGs are written into.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of images to generate.
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Image width in pixels.
    #[arg(long, default_value_t = 384)]
    pub width: u32,
    /// Image height in pixels.
    #[arg(long, default_value_t = 256)]
    pub height: u32,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct DatasetArgs {
    /// Directory of lossless source images (.png / .ppm).
    #[arg(long)]
    pub source: PathBuf,
    /// Output path of the dataset index.
    #[arg(long)]
    pub out: PathBuf,
    /// Key=value configuration file supplying defaults for the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Split/subsample seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training patches per class.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Val/test patches per class.
    #[arg(long)]
    pub eval_budget: Option<usize>,
    /// Fraction of non-test images held out for validation.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Fraction of images reserved for the test split.
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory of source images referenced by the index.
    #[arg(long)]
    pub source: PathBuf,
    /// Dataset index built by `dataset`.
    #[arg(long)]
    pub index: PathBuf,
    /// Training stage: `unaware` or `aware`.
    #[arg(long)]
    pub stage: String,
    /// Output model path.
    #[arg(long)]
    pub out: PathBuf,
    /// Parent model to fine-tune (required for the aware stage).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Key=value configuration file supplying defaults for the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Lowest JPEG quality factor drawn in the aware stage.
    #[arg(long)]
    pub qf_lo: Option<u8>,
    /// Highest JPEG quality factor drawn in the aware stage.
    #[arg(long)]
    pub qf_hi: Option<u8>,
    /// Channel width multiplier of the architecture.
    #[arg(long)]
    pub width_mult: Option<f64>,
    /// Training seed (init, shuffles, dropout, QF draws).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// Image to score (PNG or PPM).
    pub image: PathBuf,
    /// Trained model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Explicit decision threshold on the mean patch score.
    #[arg(long, conflicts_with = "calibration")]
    pub threshold: Option<f64>,
    /// Calibration CSV written by `eval` (per-QF thresholds).
    #[arg(long, requires = "qf")]
    pub calibration: Option<PathBuf>,
    /// Which calibration column to use: a quality factor or `none`.
    #[arg(long)]
    pub qf: Option<String>,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of source images referenced by the index.
    #[arg(long)]
    pub source: PathBuf,
    /// Dataset index; its test split provides the pristine corpus.
    #[arg(long)]
    pub index: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Key=value configuration file supplying defaults for the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated QF columns, e.g. `none,100,98,95,90,85,80,75`.
    #[arg(long)]
    pub qf_sweep: Option<String>,
    /// Operator rows (token form, repeatable); defaults to the three
    /// training operators at matched parameters.
    #[arg(long = "op")]
    pub ops: Vec<String>,
}

#[derive(Args, Debug)]
pub struct OpArgs {
    #[command(subcommand)]
    pub action: OpAction,
}

#[derive(Subcommand, Debug)]
pub enum OpAction {
    /// Apply one operator: `op apply --kind gamma --param gamma=1.5 in out`.
    Apply(OpApplyArgs),
}

#[derive(Args, Debug)]
pub struct OpApplyArgs {
    /// Operator kind: clahe, gamma, hist-stretch, hist-eq, brightness,
    /// contrast, s-curve, auto-contrast, auto-color, auto-tone.
    #[arg(long)]
    pub kind: String,
    /// Operator parameter as key=value (repeatable).
    #[arg(long = "param")]
    pub params: Vec<String>,
    /// Input image.
    pub input: PathBuf,
    /// Output image.
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct JpegsimArgs {
    /// Quality factor in [1, 100].
    #[arg(long)]
    pub qf: u8,
    /// Chroma sampling: 444 (default) or 420.
    #[arg(long, default_value = "444")]
    pub chroma: String,
    /// Input image.
    pub input: PathBuf,
    /// Output image.
    pub output: PathBuf,
}

/// A failure carrying its exit code; printed as one machine-parsable line.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<tonedetect_core::Error> for CliError {
    fn from(e: tonedetect_core::Error) -> Self {
        use tonedetect_core::Error as E;
        let code = match &e {
            E::InvalidParameter(_) => EXIT_CONFIG,
            E::Io { .. }
            | E::Ingest { .. }
            | E::Parse { .. }
            | E::ModelFormat(_)
            | E::ModelShape { .. }
            | E::ModelTruncated { .. } => EXIT_MISSING_INPUT,
            _ => EXIT_PROCESSING,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Parse arguments, dispatch, and return the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    return EXIT_OK;
                }
                _ => EXIT_USAGE,
            };
            eprint!("{e}");
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error[E{}]: {}", e.code, e.message);
            e.code
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Dataset(args) => commands::dataset(args),
        Command::Train(args) => commands::train(args),
        Command::Detect(args) => commands::detect(args),
        Command::Eval(args) => commands::eval(args),
        Command::Op(args) => match args.action {
            OpAction::Apply(apply) => commands::op_apply(apply),
        },
        Command::Jpegsim(args) => commands::jpegsim(args),
    }
}
