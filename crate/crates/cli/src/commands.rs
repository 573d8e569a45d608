use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use fundus_core::data::{
    label_map, load_image, load_labels, load_records, split_dataset, validate_ratios, AugmentParams,
};
use fundus_core::eval::{dataset_stats, evaluate_model, evaluate_scores};
use fundus_core::gradcheck::{gradcheck, GradCheckOptions};
use fundus_core::network::check_threshold;
use fundus_core::optim::RmsPropConfig;
use fundus_core::train::{load_checkpoint, save_checkpoint, Seeds, TrainState, Trainer};
use fundus_core::{
    load_weights, model_version, predict, save_weights, DataError, DatasetSplit, EvalError, FormatError, ModelConfig,
    ModelError, ModelWeights, TrainConfig, TrainError,
};
use fundus_server::{ServeError, ServerConfig};

use crate::args::{
    Cli, Command, EvalArgs, Format, Global, GradcheckArgs, PredictArgs, ServeArgs, SplitArgs, StatsArgs, TrainArgs,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("score file: {0}")]
    Scores(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Contents of the config echo file written by every run.
#[derive(Serialize, Deserialize)]
pub struct Echo {
    pub fundus_version: String,
    pub cli: Cli,
    /// Values derived from the flags, e.g. the full training config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective: Option<Value>,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Command::Replay(args) = &cli.command {
        let text = read_text(&args.echo_file)?;
        let echo: Echo = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{} is not a config echo: {e}", args.echo_file.display())))?;
        let mut replayed = echo.cli;
        if matches!(replayed.command, Command::Replay(_)) {
            return Err(CliError::Usage("a config echo cannot replay another replay".into()));
        }
        replayed.global.echo = cli.global.echo.clone();
        return run(replayed);
    }
    write_echo(&cli)?;
    let g = &cli.global;
    match &cli.command {
        Command::Split(a) => split(g, a),
        Command::Train(a) => train(g, a),
        Command::Eval(a) => eval(g, a),
        Command::Predict(a) => predict_cmd(g, a),
        Command::Gradcheck(a) => gradcheck_cmd(g, a),
        Command::Serve(a) => serve(g, a),
        Command::Stats(a) => stats(g, a),
        Command::Replay(_) => unreachable!("handled above"),
    }
}

fn write_echo(cli: &Cli) -> Result<()> {
    let effective = match &cli.command {
        Command::Train(a) if a.resume.is_none() => Some(serde_json::to_value(train_config(&cli.global, a)).unwrap()),
        _ => None,
    };
    let echo = Echo { fundus_version: env!("CARGO_PKG_VERSION").to_string(), cli: cli.clone(), effective };
    let path =
        cli.global.echo.clone().unwrap_or_else(|| PathBuf::from(format!("fundus-{}.config.json", cli.command.name())));
    write_text(&path, &serde_json::to_string_pretty(&echo).unwrap())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn emit(format: Format, value: &impl Serialize, pretty: impl FnOnce() -> String) {
    match format {
        Format::Json => println!("{}", serde_json::to_string(value).unwrap()),
        Format::Pretty => print!("{}", pretty()),
    }
}

fn split(g: &Global, a: &SplitArgs) -> Result<()> {
    let ratios: [f64; 3] = a
        .ratios
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Usage("--ratios takes exactly three comma-separated fractions".into()))?;
    validate_ratios(ratios).map_err(|e| CliError::Usage(e.to_string()))?;
    let labels = load_labels(&a.labels)?;
    let split = split_dataset(&labels.ids(), ratios, g.seed)?;
    split.write_manifest(&a.out)?;
    let summary = json!({
        "manifest": a.out,
        "seed": g.seed,
        "train": split.train.len(),
        "validation": split.validation.len(),
        "test": split.test.len(),
    });
    emit(g.format, &summary, || {
        format!(
            "wrote {}: train {}, validation {}, test {} (seed {})\n",
            a.out.display(),
            split.train.len(),
            split.validation.len(),
            split.test.len(),
            g.seed
        )
    });
    Ok(())
}

pub fn train_config(g: &Global, a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        model: ModelConfig::standard(),
        optimizer: RmsPropConfig { learning_rate: a.learning_rate, ..RmsPropConfig::default() },
        epochs: a.epochs,
        steps_per_epoch: a.steps_per_epoch,
        validation_steps: a.validation_steps,
        batch_size: g.batch_size,
        seeds: Seeds::from_base(g.seed),
        augment: (!a.no_augment).then(AugmentParams::default),
        threshold: g.threshold,
        class_weighting: a.class_weighting,
    }
}

fn load_part(
    split: &DatasetSplit,
    part: fundus_core::Part,
    images: &Path,
    labels: &std::collections::HashMap<String, u8>,
) -> Result<Vec<fundus_core::ImageRecord>> {
    let records = load_records(images, split.part(part), labels)?;
    log::info!("loaded {} {part} images", records.len());
    Ok(records)
}

fn labels_for(path: &Path) -> Result<std::collections::HashMap<String, u8>> {
    let set = load_labels(path)?;
    let (map, warnings) = label_map(&set);
    for w in &warnings {
        log::warn!("label file line {} (`{}`): {}", w.line, w.id, w.message);
    }
    Ok(map)
}

fn train(g: &Global, a: &TrainArgs) -> Result<()> {
    let state = match &a.resume {
        Some(path) => {
            let state = load_checkpoint(path)?;
            log::info!(
                "resuming from {} after epoch {} of {}",
                path.display(),
                state.epochs_done(),
                state.config.epochs
            );
            state
        }
        None => TrainState::new(train_config(g, a))?,
    };
    let split = DatasetSplit::read_manifest(&a.manifest)?;
    let labels = labels_for(&a.labels)?;
    let train_set = load_part(&split, fundus_core::Part::Train, &a.images, &labels)?;
    let val_set = load_part(&split, fundus_core::Part::Validation, &a.images, &labels)?;

    let history_path = a.history.clone().unwrap_or_else(|| a.out.with_extension("history.json"));
    let trainer = Trainer::resume(state, &train_set, &val_set)?;
    let state = trainer.run(|s| {
        let e = s.history.last().expect("an epoch just finished");
        log::info!(
            "epoch {}/{}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4} ({:.1} s)",
            e.epoch,
            s.config.epochs,
            e.train_loss,
            e.train_accuracy,
            e.val_loss,
            e.val_accuracy,
            e.seconds
        );
        if let Some(path) = &a.checkpoint {
            save_checkpoint(s, path)?;
        }
        write_history(&history_path, &s.history)
            .map_err(|source| TrainError::Data(DataError::Io { path: history_path.clone(), source }))
    })?;

    save_weights(&state.weights, &a.out)?;
    write_history(&history_path, &state.history)
        .map_err(|source| CliError::Io { path: history_path.clone(), source })?;
    let summary = json!({
        "weights": a.out,
        "history": history_path,
        "model_version": model_version(&state.weights),
        "checksum": state.weights.checksum(),
        "epochs": state.history.len(),
        "final": state.history.last(),
    });
    emit(g.format, &summary, || {
        let mut s = format!("wrote {} ({})\n", a.out.display(), model_version(&state.weights));
        for e in &state.history {
            s.push_str(&format!(
                "epoch {:>3}  loss {:.4}  acc {:.4}  val_loss {:.4}  val_acc {:.4}\n",
                e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
            ));
        }
        s
    });
    Ok(())
}

fn write_history(path: &Path, history: &fundus_core::TrainHistory) -> std::io::Result<()> {
    fs::write(path, serde_json::to_string_pretty(history).unwrap())
}

fn load_standard_weights(path: &Path) -> Result<ModelWeights> {
    Ok(load_weights(path, &ModelConfig::standard())?)
}

fn eval(g: &Global, a: &EvalArgs) -> Result<()> {
    check_threshold(g.threshold).map_err(|e| CliError::Usage(e.to_string()))?;
    let report = match (&a.scores, &a.weights, &a.manifest) {
        (Some(path), _, _) => {
            let (scores, labels) = read_scores(path)?;
            evaluate_scores(&scores, &labels, g.threshold)?
        }
        (None, Some(weights), Some(manifest)) => {
            let weights = load_standard_weights(weights)?;
            let split = DatasetSplit::read_manifest(manifest)?;
            let labels = labels_for(a.labels.as_deref().expect("clap requires --labels"))?;
            let images = a.images.as_deref().expect("clap requires --images");
            let records = load_part(&split, a.part, images, &labels)?;
            if records.is_empty() {
                return Err(DataError::EmptyPart(a.part.to_string()).into());
            }
            evaluate_model(&weights, &records, g.threshold)?.0
        }
        _ => return Err(CliError::Usage("eval needs --scores, or --weights with --manifest".into())),
    };
    if let Some(out) = &a.out {
        write_text(out, &serde_json::to_string_pretty(&report).unwrap())?;
    }
    emit(g.format, &report, || report.to_pretty());
    Ok(())
}

#[derive(Deserialize)]
struct ScoreRow {
    score: f64,
    label: u8,
}

fn read_scores(path: &Path) -> Result<(Vec<f64>, Vec<u8>)> {
    let text = if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        s
    } else {
        read_text(path)?
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for row in rdr.deserialize::<ScoreRow>() {
        let row = row.map_err(|e| CliError::Scores(e.to_string()))?;
        scores.push(row.score);
        labels.push(row.label);
    }
    Ok((scores, labels))
}

/// One-line prediction result.
#[derive(Serialize, Deserialize)]
pub struct PredictOutput {
    pub label: fundus_core::Label,
    pub score: f64,
    pub threshold: f64,
    pub model_version: String,
}

fn predict_cmd(g: &Global, a: &PredictArgs) -> Result<()> {
    check_threshold(g.threshold).map_err(|e| CliError::Usage(e.to_string()))?;
    let fail = |code: &str, err: CliError| {
        println!("{}", json!({ "error": code, "detail": err.to_string() }));
        err
    };
    let weights = load_standard_weights(&a.weights).map_err(|e| fail("weights_error", e))?;
    let image = load_image(&a.image).map_err(|e| fail("decode_error", e.into()))?;
    let d = predict(&weights, &image, g.threshold).map_err(|e| fail("internal_error", e.into()))?;
    let out = PredictOutput {
        label: d.label,
        score: d.score,
        threshold: d.threshold,
        model_version: model_version(&weights),
    };
    emit(g.format, &out, || {
        format!("{}: {} (score {:.4}, threshold {})\n", a.image.display(), out.label, out.score, out.threshold)
    });
    Ok(())
}

fn gradcheck_cmd(g: &Global, a: &GradcheckArgs) -> Result<()> {
    let opts = GradCheckOptions { step: a.step, tolerance: a.tolerance, corrupt: a.corrupt.clone() };
    let report = gradcheck(&ModelConfig::gradcheck_fixture(), g.seed, &opts)?;
    emit(g.format, &report, || report.to_table());
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report.rows.iter().filter(|r| !r.passed).map(|r| r.tensor.as_str()).collect();
        Err(CliError::Failed(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn serve(g: &Global, a: &ServeArgs) -> Result<()> {
    let weights = load_standard_weights(&a.weights)?;
    let config =
        ServerConfig { bind: a.bind, threshold: g.threshold, ui_dir: a.ui_dir.clone(), ..ServerConfig::default() };
    let rt = tokio::runtime::Runtime::new()
        .map_err(|source| CliError::Io { path: PathBuf::from("<tokio runtime>"), source })?;
    rt.block_on(fundus_server::serve(weights, config))?;
    Ok(())
}

fn stats(g: &Global, a: &StatsArgs) -> Result<()> {
    let labels = load_labels(&a.labels)?;
    let counts = dataset_stats(&labels);
    emit(g.format, &counts, || counts.iter().map(|c| format!("{:<8} {}\n", c.code, c.count)).collect());
    Ok(())
}
