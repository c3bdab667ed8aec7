use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "wop", version, about = "Learn, apply and score binary image operators")]
pub struct Cli {
    /// Worker threads (default: all cores). `--threads 1` makes every
    /// output byte-reproducible.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// JSON file of flag values (keys are flag names). Flags given on the
    /// command line win. A run manifest is accepted as well.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true, value_name = "FILE")]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic score corpus.
    Gen(GenArgs),
    /// Extract a patch dataset from a corpus split.
    Extract(ExtractArgs),
    /// Train a CNN or lookup-table model on a dataset.
    Train(TrainArgs),
    /// Grid-search CNN hyperparameters and retrain the best model.
    Select(SelectArgs),
    /// Apply a model to images.
    Apply(ApplyArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenArgs {
    /// Output corpus directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub images: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 3)]
    pub staves: usize,
    #[arg(long, default_value_t = 5)]
    pub lines_per_staff: usize,
    /// Staff line thickness range, `min,max`.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2])]
    pub line_thickness: Vec<usize>,
    /// Staff line spacing range, `min,max`.
    #[arg(long, value_delimiter = ',', default_values_t = [8, 12])]
    pub line_spacing: Vec<usize>,
    /// Symbols per staff range, `min,max`.
    #[arg(long, value_delimiter = ',', default_values_t = [6, 12])]
    pub symbols_per_staff: Vec<usize>,
    #[arg(long, default_value_t = 0.002)]
    pub pepper: f64,
    #[arg(long, default_value_t = 0.01)]
    pub line_breaks: f64,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExtractArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// train, validation or test.
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Square window size (odd).
    #[arg(long, default_value_t = 9)]
    pub window: usize,
    /// Window height when it differs from the width.
    #[arg(long)]
    pub window_h: Option<usize>,
    /// foreground_only or all.
    #[arg(long, default_value = "foreground_only")]
    pub sampling: String,
    /// Keep a uniform random sample of this many patches.
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub subsample_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize, Clone)]
#[serde(rename_all = "kebab-case")]
pub struct ArchArgs {
    /// Masks per conv block, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [32, 32])]
    pub masks: Vec<usize>,
    /// Mask size per conv block, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [5, 5])]
    pub block_mask_sizes: Vec<usize>,
    #[arg(long, default_value_t = 512)]
    pub fc_hidden: usize,
    #[arg(long, default_value_t = 50)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// f32 or f64.
    #[arg(long, default_value = "f32")]
    pub precision: String,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Validation dataset; its MAE is logged after every epoch.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Fit the lookup-table baseline instead of a CNN.
    #[arg(long)]
    pub table: bool,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Per-epoch CSV log (default: `<out>.log.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub arch: ArchArgs,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SelectArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Grid directory for checkpoints, records and the final model.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [9, 11, 13, 15, 17, 19])]
    pub windows: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [10.0, 1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6])]
    pub lrs: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5])]
    pub dropouts: Vec<f64>,
    /// First-block mask sizes to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [5])]
    pub mask_sizes: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long)]
    pub train_subsample: Option<usize>,
    #[arg(long)]
    pub val_subsample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub subsample_seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 1)]
    pub narrow_steps: usize,
    /// foreground_only or all.
    #[arg(long, default_value = "foreground_only")]
    pub sampling: String,
    /// Skip retraining the selected configuration on the full training set.
    #[arg(long)]
    pub no_retrain: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub arch: ArchArgs,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ApplyArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// foreground_only or all.
    #[arg(long, default_value = "foreground_only")]
    pub mode: String,
    /// Output directory; results keep the input file names.
    #[arg(long)]
    pub out: PathBuf,
    /// Apply to every image of this corpus split instead of listed files.
    #[arg(long, requires = "split")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// Input images.
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    /// Corpus supplying inputs and expected outputs.
    #[arg(long, requires = "split")]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// Directory of predictions named like the corpus input files.
    #[arg(long)]
    pub predicted_dir: Option<PathBuf>,
    /// Explicit triples: repeat --input/--predicted/--expected in order.
    #[arg(long, value_delimiter = ',')]
    pub input: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub predicted: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub expected: Vec<PathBuf>,
    /// CSV output (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
