use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

mod commands;

/// Unsupervised speckle denoising with chained cycle-consistent GAN stages.
#[derive(Parser, Debug)]
#[command(name = "dmcw", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate paired clean/noisy layered phantoms.
    Phantom(PhantomArgs),
    /// Upscale images and cut random square crops.
    Augment(AugmentArgs),
    /// Train a model on unpaired noisy and clean crops.
    Train(TrainArgs),
    /// Denoise images with a trained checkpoint.
    Denoise(DenoiseArgs),
    /// Score denoised images against clean references.
    Evaluate(EvaluateArgs),
    /// Train and score several variants over several seeds.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    /// Output directory; receives clean/, noisy/ and two manifests.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 21)]
    pub count: usize,
    #[arg(long, default_value_t = 360)]
    pub height: usize,
    #[arg(long, default_value_t = 800)]
    pub width: usize,
    /// Speckle looks L (noise variance 1/L).
    #[arg(long, default_value_t = 4.0)]
    pub looks: f64,
    #[arg(long, default_value_t = 6)]
    pub layers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// Directory of PNGs or a manifest file.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub crops: usize,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 1.5)]
    pub scale: f64,
    /// Also write train.txt/test.txt manifests with this training fraction.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Training knobs that override the config file.
#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub clip_c: Option<f64>,
    #[arg(long)]
    pub n_critic: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub merge_alpha: Option<f64>,
    #[arg(long)]
    pub crop_size: Option<usize>,
    /// Any config key, as key=value; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Noisy crops (directory or manifest).
    #[arg(long)]
    pub noisy: PathBuf,
    /// Clean crops (directory or manifest); need not correspond to --noisy.
    #[arg(long)]
    pub clean: PathBuf,
    /// Run root; the checkpoint goes to <out>/<variant>-seed<seed>/.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PNG file, directory of PNGs or manifest.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write stage-1 output and the merged image.
    #[arg(long)]
    pub dump_intermediates: bool,
    /// Tile size for images the generators cannot take whole (default: the
    /// training crop size).
    #[arg(long)]
    pub tile: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub overlap: usize,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Checkpoint used to denoise --noisy.
    #[arg(
        long,
        conflicts_with = "denoised",
        required_unless_present = "denoised"
    )]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    pub noisy: Option<PathBuf>,
    /// Already denoised images, scored as they are.
    #[arg(long)]
    pub denoised: Option<PathBuf>,
    /// Clean references in the same order.
    #[arg(long)]
    pub clean: PathBuf,
    /// Homogeneous background region `row_start:row_end:col_start:col_end`.
    #[arg(long)]
    pub region: String,
    /// CSV output path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Paired noisy images (directory or manifest).
    #[arg(long)]
    pub noisy: PathBuf,
    /// Paired clean references, same order as --noisy.
    #[arg(long)]
    pub clean: PathBuf,
    /// Comma-separated variants (default: all five).
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Training fraction of the pair split.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    /// Seed of the train/test split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub region: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Phantom(a) => commands::phantom(&a),
        Command::Augment(a) => commands::augment(&a),
        Command::Train(a) => commands::train(&a),
        Command::Denoise(a) => commands::denoise(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Ablate(a) => commands::ablate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
