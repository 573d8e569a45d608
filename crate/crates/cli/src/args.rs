use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use fundus_core::Part;

#[derive(Parser, Clone, Debug, Serialize, Deserialize)]
#[command(name = "fundus", version, about = "Retinal fundus screening: split, train, evaluate, predict, serve")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct Global {
    /// Base seed for splitting, initialization, shuffling and augmentation.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Decision threshold: scores at or above it are called diseased.
    #[arg(long, global = true, env = "FUNDUS_THRESHOLD", default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, global = true, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Where to write the config echo of this run.
    /// Defaults to `fundus-<command>.config.json` in the working directory.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub echo: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Pretty,
}

#[derive(Subcommand, Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Split the ids of a label file into a train/validation/test manifest.
    Split(SplitArgs),
    /// Train the network on the train part of a manifest.
    Train(TrainArgs),
    /// Evaluate weights on a manifest part, or score a precomputed score file.
    Eval(EvalArgs),
    /// Diagnose one image.
    Predict(PredictArgs),
    /// Finite-difference check of the backward pass on the small fixture model.
    Gradcheck(GradcheckArgs),
    /// Serve the HTTP diagnosis API and the upload page.
    Serve(ServeArgs),
    /// Per-disease case counts of a label file.
    Stats(StatsArgs),
    /// Re-run the command recorded in a config echo file.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Split(_) => "split",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Predict(_) => "predict",
            Command::Gradcheck(_) => "gradcheck",
            Command::Serve(_) => "serve",
            Command::Stats(_) => "stats",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SplitArgs {
    /// Label CSV with `ID` and `Disease_Risk` columns.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.6, 0.2, 0.2])]
    pub ratios: Vec<f64>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Output weights file.
    #[arg(long)]
    pub out: PathBuf,
    /// History JSON; defaults to the weights path with a `.history.json` extension.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 45)]
    pub steps_per_epoch: usize,
    #[arg(long, default_value_t = 8)]
    pub validation_steps: usize,
    #[arg(long, default_value_t = 0.001)]
    pub learning_rate: f32,
    /// Train on raw images without random flips and warps.
    #[arg(long)]
    pub no_augment: bool,
    /// Weight the loss so both classes contribute equally.
    #[arg(long)]
    pub class_weighting: bool,
    /// Save a resumable checkpoint here after every epoch.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint; its recorded config replaces the training flags.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "scores")]
    pub weights: Option<PathBuf>,
    #[arg(long, requires_all = ["images", "labels"])]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "validation", value_parser = parse_part)]
    pub part: Part,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// CSV with `score` and `label` columns (`-` reads stdin) instead of a model run.
    #[arg(long, conflicts_with_all = ["weights", "manifest"])]
    pub scores: Option<PathBuf>,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_part(s: &str) -> Result<Part, String> {
    s.parse()
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Test hook: perturb the analytic gradient of the named tensor.
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ServeArgs {
    #[arg(long, env = "FUNDUS_WEIGHTS")]
    pub weights: PathBuf,
    #[arg(long, env = "FUNDUS_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Directory of the UI bundle served at `/`; a built-in page is used otherwise.
    #[arg(long, env = "FUNDUS_UI_DIR")]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub labels: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub echo_file: PathBuf,
}
