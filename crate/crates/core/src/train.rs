//! Mini-batch RMSprop training on binary cross-entropy, with per-epoch
//! validation and resumable checkpoints.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{batches, AugmentParams, Batch, BatchStream, ImageRecord, StreamCursor};
use crate::error::{FormatError, TrainError};
use crate::network::{backward, check_threshold, forward, init_weights, ModelConfig, ModelWeights, Parameters};
use crate::ops::{bce_loss, bce_mean};
use crate::optim::{RmsPropConfig, RmsPropState};
use crate::persist::{self, ByteReader};
use crate::tensor::Tensor;

/// Seeds of the three independent random streams of a run.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Seeds {
    pub init: u64,
    pub shuffle: u64,
    pub augment: u64,
}

impl Seeds {
    /// Three distinct seeds derived from one.
    pub fn from_base(seed: u64) -> Self {
        const STRIDE: u64 = 0x9e37_79b9_7f4a_7c15;
        Self { init: seed, shuffle: seed.wrapping_add(STRIDE), augment: seed.wrapping_add(STRIDE.wrapping_mul(2)) }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optimizer: RmsPropConfig,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub validation_steps: usize,
    pub batch_size: usize,
    pub seeds: Seeds,
    /// Augmentation of training batches; `None` trains on the raw images.
    /// The seed inside is replaced by `seeds.augment`.
    pub augment: Option<AugmentParams>,
    /// Threshold for the accuracies logged during training.
    pub threshold: f64,
    /// Weight each sample's loss by `n / (2 · n_class)` of its class.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::standard(),
            optimizer: RmsPropConfig::default(),
            epochs: 10,
            steps_per_epoch: 45,
            validation_steps: 8,
            batch_size: 32,
            seeds: Seeds::from_base(42),
            augment: Some(AugmentParams::default()),
            threshold: 0.5,
            class_weighting: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.steps_per_epoch == 0 || self.validation_steps == 0 || self.batch_size == 0 {
            return bad("steps_per_epoch, validation_steps and batch_size must be positive".into());
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", o.learning_rate));
        }
        if !(o.rho > 0.0 && o.rho < 1.0) {
            return bad(format!("rho {} must lie in (0, 1)", o.rho));
        }
        if o.epsilon.is_nan() || o.epsilon <= 0.0 {
            return bad(format!("epsilon {} must be positive", o.epsilon));
        }
        if let Some(a) = &self.augment {
            if !(0.0..=1.0).contains(&a.flip_prob)
                || a.rotation_deg < 0.0
                || a.zoom < 0.0
                || a.zoom >= 1.0
                || a.shear_deg < 0.0
            {
                return bad(format!("augmentation ranges out of bounds: {a:?}"));
            }
        }
        check_threshold(self.threshold)?;
        self.model.validate()?;
        Ok(())
    }

    fn augment_params(&self) -> Option<AugmentParams> {
        self.augment.map(|a| AugmentParams { seed: self.seeds.augment, ..a })
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean unweighted cross-entropy over every training sample of the epoch.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

pub type TrainHistory = Vec<EpochStats>;

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct Validation {
    pub loss: f64,
    pub accuracy: f64,
    pub samples: usize,
}

/// Mean loss and accuracy over up to `steps` unaugmented batches of
/// `records` in storage order. Stops early at the end of the part.
pub fn validate(
    weights: &ModelWeights,
    records: &[ImageRecord],
    steps: usize,
    batch_size: usize,
    threshold: f64,
) -> Result<Validation, TrainError> {
    check_threshold(threshold)?;
    if steps == 0 || batch_size == 0 {
        return Err(TrainError::Config("validation steps and batch size must be positive".into()));
    }
    let stream = batches(records, batch_size, None, None)?;
    let take = steps.min(stream.batches_per_pass());
    let (mut loss, mut correct, mut n) = (0.0f64, 0usize, 0usize);
    for batch in stream.take(take) {
        let scores = score_batch(weights, &batch)?;
        for (&s, &y) in scores.iter().zip(&batch.labels) {
            loss += f64::from(bce_loss(s, y));
            correct += usize::from((f64::from(s) >= threshold) == (y == 1));
        }
        n += batch.len();
    }
    Ok(Validation { loss: loss / n as f64, accuracy: correct as f64 / n as f64, samples: n })
}

fn score_batch(weights: &ModelWeights, batch: &Batch) -> Result<Vec<f32>, TrainError> {
    (0..batch.len()).into_par_iter().map(|i| forward(weights, &batch.image(i)).map_err(TrainError::from)).collect()
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, PartialEq, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub weights: ModelWeights,
    /// One accumulator per parameter tensor, in `Parameters::tensors` order.
    pub optimizer: Vec<RmsPropState>,
    pub cursor: StreamCursor,
    pub history: TrainHistory,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let weights = init_weights(&config.model, config.seeds.init)?;
        let optimizer = weights
            .params
            .tensors()
            .into_iter()
            .map(|t| RmsPropState::new(t.shape(), config.optimizer))
            .collect::<Result<_, _>>()
            .map_err(crate::error::ModelError::from)?;
        Ok(Self { config, weights, optimizer, cursor: StreamCursor::default(), history: Vec::new() })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done() >= self.config.epochs
    }
}

/// Steps through a run one epoch at a time.
pub struct Trainer<'a> {
    state: TrainState,
    train: &'a [ImageRecord],
    validation: &'a [ImageRecord],
    class_weights: [f32; 2],
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainConfig,
        train: &'a [ImageRecord],
        validation: &'a [ImageRecord],
    ) -> Result<Self, TrainError> {
        Self::resume(TrainState::new(config)?, train, validation)
    }

    pub fn resume(
        state: TrainState,
        train: &'a [ImageRecord],
        validation: &'a [ImageRecord],
    ) -> Result<Self, TrainError> {
        state.config.validate()?;
        if train.is_empty() {
            return Err(crate::error::DataError::EmptyPart("train".into()).into());
        }
        if validation.is_empty() {
            return Err(crate::error::DataError::EmptyPart("validation".into()).into());
        }
        let class_weights = if state.config.class_weighting { balanced_class_weights(train) } else { [1.0, 1.0] };
        Ok(Self { state, train, validation, class_weights })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    /// Runs the next epoch; `None` once all epochs are done.
    pub fn run_epoch(&mut self) -> Result<Option<&EpochStats>, TrainError> {
        if self.state.is_finished() {
            return Ok(None);
        }
        let started = Instant::now();
        let epoch = self.state.epochs_done() + 1;
        let cfg = &self.state.config;
        let mut stream = BatchStream::resume(
            self.train,
            cfg.batch_size,
            Some(cfg.seeds.shuffle),
            cfg.augment_params(),
            self.state.cursor,
        )?;
        let (steps, threshold) = (cfg.steps_per_epoch, cfg.threshold);
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for step in 1..=steps {
            let batch = stream.next().expect("batch streams are endless");
            let out = self.step(&batch).map_err(|e| match e {
                StepError::NonFinite => TrainError::NonFiniteLoss { epoch, step, ids: batch.ids.clone() },
                StepError::Other(e) => e,
            })?;
            loss_sum += out.loss_sum;
            correct +=
                out.scores.iter().zip(&batch.labels).filter(|(&s, &y)| (f64::from(s) >= threshold) == (y == 1)).count();
            seen += batch.len();
        }
        self.state.cursor = stream.cursor();
        let cfg = &self.state.config;
        let val = validate(&self.state.weights, self.validation, cfg.validation_steps, cfg.batch_size, threshold)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4} ({:.1}s)",
            cfg.epochs,
            stats.train_loss,
            stats.train_accuracy,
            stats.val_loss,
            stats.val_accuracy,
            stats.seconds
        );
        self.state.history.push(stats);
        Ok(self.state.history.last())
    }

    /// One optimizer update on `batch`.
    fn step(&mut self, batch: &Batch) -> Result<StepOutput, StepError> {
        let weights = &self.state.weights;
        let per_sample: Vec<_> = (0..batch.len())
            .into_par_iter()
            .map(|i| backward(weights, &batch.image(i), batch.labels[i]))
            .collect::<Result<_, _>>()
            .map_err(|e| StepError::Other(e.into()))?;

        // fixed-order reduction keeps the sum independent of thread scheduling
        let mut grads = Parameters::zeros(&weights.config).map_err(|e| StepError::Other(e.into()))?;
        let mut loss_sum = 0.0f64;
        let mut scores = Vec::with_capacity(batch.len());
        for (bp, &y) in per_sample.iter().zip(&batch.labels) {
            let w = self.class_weights[usize::from(y)];
            let mut g = bp.grads.clone();
            if w != 1.0 {
                g.scale(w);
            }
            grads.add_assign(&g).map_err(|e| StepError::Other(e.into()))?;
            loss_sum += f64::from(bp.loss);
            scores.push(bp.score);
        }
        grads.scale(1.0 / batch.len() as f32);
        if !loss_sum.is_finite() || grads.tensors().iter().any(|t| !t.all_finite()) {
            return Err(StepError::NonFinite);
        }
        for ((param, grad), opt) in
            self.state.weights.params.tensors_mut().into_iter().zip(grads.tensors()).zip(&mut self.state.optimizer)
        {
            opt.step(param, grad).map_err(|e| StepError::Other(crate::error::ModelError::from(e).into()))?;
        }
        Ok(StepOutput { loss_sum, scores })
    }

    /// Runs every remaining epoch, calling `after_epoch` after each.
    pub fn run(
        mut self,
        mut after_epoch: impl FnMut(&TrainState) -> Result<(), TrainError>,
    ) -> Result<TrainState, TrainError> {
        while self.run_epoch()?.is_some() {
            after_epoch(&self.state)?;
        }
        Ok(self.state)
    }
}

struct StepOutput {
    loss_sum: f64,
    scores: Vec<f32>,
}

enum StepError {
    NonFinite,
    Other(TrainError),
}

/// `n / (2 · n_class)` per class, so both classes carry equal total weight.
pub fn balanced_class_weights(records: &[ImageRecord]) -> [f32; 2] {
    let n = records.len() as f64;
    let pos = records.iter().filter(|r| r.label == 1).count() as f64;
    let neg = n - pos;
    let w = |count: f64| if count > 0.0 { (n / (2.0 * count)) as f32 } else { 1.0 };
    [w(neg), w(pos)]
}

/// Trains from scratch for `config.epochs` epochs.
pub fn train(
    config: TrainConfig,
    train: &[ImageRecord],
    validation: &[ImageRecord],
) -> Result<(ModelWeights, TrainHistory), TrainError> {
    let state = Trainer::new(config, train, validation)?.run(|_| Ok(()))?;
    Ok((state.weights, state.history))
}

/// Mean loss of `weights` on `records`; a convenience for tests and reports.
pub fn mean_loss(weights: &ModelWeights, records: &[ImageRecord]) -> Result<f64, TrainError> {
    let scores: Vec<f32> =
        records.par_iter().map(|r| forward(weights, &r.pixels).map_err(TrainError::from)).collect::<Result<_, _>>()?;
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    Ok(f64::from(bce_mean(&scores, &labels)))
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FUNDUSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint layout, integers little-endian:
///
/// ```text
/// magic        8 bytes "FUNDUSCK"
/// version      u32
/// weights      u64 length + a complete weights file
/// optimizer    u32 count, then per tensor the accumulator values as f32
/// cursor       u64 pass, u64 position, u64 draws
/// run          u64 length + JSON {config, history}
/// checksum     32 bytes SHA-256 of everything above
/// ```
pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    persist::put_u32(&mut out, CHECKPOINT_VERSION);
    persist::put_bytes(&mut out, &persist::encode_weights(&state.weights));
    persist::put_u32(&mut out, state.optimizer.len() as u32);
    for opt in &state.optimizer {
        persist::put_f32s(&mut out, opt.v.data());
    }
    persist::put_u64(&mut out, state.cursor.pass);
    persist::put_u64(&mut out, state.cursor.position as u64);
    persist::put_u64(&mut out, state.cursor.draws);
    let run = RunSection { config: state.config.clone(), history: state.history.clone() };
    persist::put_bytes(&mut out, &serde_json::to_vec(&run).expect("plain data serializes"));
    persist::seal(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState, FormatError> {
    let body = persist::unseal(bytes, CHECKPOINT_MAGIC, "checkpoint")?;
    let mut r = ByteReader::new(&body[CHECKPOINT_MAGIC.len()..]);
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::Version { found: version, supported: CHECKPOINT_VERSION });
    }
    let weights = persist::decode_weights(r.bytes()?)?;
    let count = r.u32()? as usize;
    let shapes: Vec<Vec<usize>> = weights.params.tensors().iter().map(|t| t.shape().to_vec()).collect();
    if count != shapes.len() {
        return Err(FormatError::Corrupt(format!("{count} optimizer tensors, expected {}", shapes.len())));
    }
    let vs = shapes
        .iter()
        .map(|s| {
            let values = r.f32s(s.iter().product())?;
            Tensor::new(s, values).map_err(|e| FormatError::Corrupt(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cursor = StreamCursor { pass: r.u64()?, position: r.u64()? as usize, draws: r.u64()? };
    let run: RunSection =
        serde_json::from_slice(r.bytes()?).map_err(|e| FormatError::Corrupt(format!("run section: {e}")))?;
    r.finish()?;
    if run.config.model != weights.config {
        return Err(FormatError::Fingerprint {
            expected: run.config.model.fingerprint(),
            found: weights.config.fingerprint(),
        });
    }
    let o = run.config.optimizer;
    let optimizer = vs
        .into_iter()
        .map(|v| RmsPropState { v, rho: o.rho, epsilon: o.epsilon, learning_rate: o.learning_rate })
        .collect();
    Ok(TrainState { config: run.config, weights, optimizer, cursor, history: run.history })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<(), FormatError> {
    persist::write_file(path, &encode_checkpoint(state))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState, FormatError> {
    decode_checkpoint(&persist::read_file(path)?)
}

#[derive(Serialize, Deserialize)]
struct RunSection {
    config: TrainConfig,
    history: TrainHistory,
}
