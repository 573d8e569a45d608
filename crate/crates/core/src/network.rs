//! The screening CNN: five conv/ReLU/max-pool blocks, a flatten, a ReLU
//! dense layer and a single sigmoid output unit.
//!
//! Counted with its input row the stack has 14 layers. The shape trace
//! reports the 13 computational stages after the input; a conv and its
//! ReLU share one stage.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ModelError;
use crate::ops::{
    bce_loss, bce_sigmoid_grad, conv2d_backward_params, conv2d_forward, dense_backward, dense_forward, flatten,
    maxpool2x2_backward, maxpool2x2_forward, relu_backward, relu_forward, sigmoid, unflatten, ConvKernel, DenseParams,
    PoolIndex, KERNEL,
};
use crate::tensor::{Scalar, Tensor};

/// Version tag written into weights files and checkpoints.
pub const FORMAT_VERSION: u32 = 1;

/// Default decision threshold; a score equal to it is called diseased.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Height, width, channels.
    pub input: [usize; 3],
    /// Filters of each conv → ReLU → 2×2 max-pool block, in order.
    pub conv_filters: Vec<usize>,
    /// Units of each hidden ReLU dense layer before the sigmoid output.
    pub hidden_units: Vec<usize>,
}

impl ModelConfig {
    /// The screening architecture: 150×150×3 input, conv filters
    /// 16, 32, 64, 64, 64, one 512-unit dense layer.
    pub fn standard() -> Self {
        Self { input: [150, 150, 3], conv_filters: vec![16, 32, 64, 64, 64], hidden_units: vec![512] }
    }

    /// Shrunken stack used by the gradient checker: 12×12×3 input, two
    /// conv/pool blocks of 2 filters each, 8 hidden units.
    pub fn gradcheck_fixture() -> Self {
        Self { input: [12, 12, 3], conv_filters: vec![2, 2], hidden_units: vec![8] }
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        for &filters in &self.conv_filters {
            layers.push(LayerSpec::Conv { filters });
            layers.push(LayerSpec::MaxPool);
        }
        layers.push(LayerSpec::Flatten);
        for &units in &self.hidden_units {
            layers.push(LayerSpec::Dense { units, activation: Activation::Relu });
        }
        layers.push(LayerSpec::Dense { units: 1, activation: Activation::Sigmoid });
        layers
    }

    pub fn parameter_count(&self) -> Result<usize, ModelError> {
        let trace = infer_shapes(self)?;
        let mut channels = self.input[2];
        let mut count = 0;
        for &f in &self.conv_filters {
            count += KERNEL * KERNEL * channels * f + f;
            channels = f;
        }
        let mut width = flatten_len(&trace);
        for units in self.hidden_units.iter().copied().chain([1]) {
            count += width * units + units;
            width = units;
        }
        Ok(count)
    }

    /// Stable 64-bit identifier of the architecture.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"fundus-cnn");
        for v in self.input {
            h.update((v as u64).to_le_bytes());
        }
        h.update((self.conv_filters.len() as u64).to_le_bytes());
        for &v in &self.conv_filters {
            h.update((v as u64).to_le_bytes());
        }
        h.update((self.hidden_units.len() as u64).to_le_bytes());
        for &v in &self.hidden_units {
            h.update((v as u64).to_le_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input.contains(&0) {
            return Err(ModelError::Config(format!("input shape {:?} has a zero dimension", self.input)));
        }
        if self.conv_filters.contains(&0) || self.hidden_units.contains(&0) {
            return Err(ModelError::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum LayerSpec {
    /// 3×3 valid convolution followed by ReLU.
    Conv {
        filters: usize,
    },
    MaxPool,
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct LayerShape {
    pub name: String,
    pub layer: LayerSpec,
    pub shape: Vec<usize>,
}

impl fmt::Display for LayerShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.shape.iter().map(ToString::to_string).collect();
        write!(f, "{:<8} {}", self.name, dims.join("x"))
    }
}

/// Output shape of every layer after the input, in order.
pub fn infer_shapes(config: &ModelConfig) -> Result<Vec<LayerShape>, ModelError> {
    config.validate()?;
    let [mut h, mut w, mut c] = config.input;
    let mut out = Vec::new();
    let (mut conv_n, mut pool_n, mut dense_n) = (0, 0, 0);
    for (idx, layer) in config.layers().into_iter().enumerate() {
        let (name, shape) = match layer {
            LayerSpec::Conv { filters } => {
                if h < KERNEL || w < KERNEL {
                    return Err(ModelError::ConvUnderflow { layer: idx + 1, height: h, width: w });
                }
                h -= KERNEL - 1;
                w -= KERNEL - 1;
                c = filters;
                conv_n += 1;
                (format!("conv{conv_n}"), vec![h, w, c])
            }
            LayerSpec::MaxPool => {
                if h < 2 || w < 2 {
                    return Err(ModelError::PoolUnderflow { layer: idx + 1, height: h, width: w });
                }
                h /= 2;
                w /= 2;
                pool_n += 1;
                (format!("pool{pool_n}"), vec![h, w, c])
            }
            LayerSpec::Flatten => ("flatten".to_string(), vec![h * w * c]),
            LayerSpec::Dense { units, activation } => {
                let name = match activation {
                    Activation::Sigmoid => "output".to_string(),
                    Activation::Relu => {
                        dense_n += 1;
                        format!("dense{dense_n}")
                    }
                };
                (name, vec![units])
            }
        };
        out.push(LayerShape { name, layer, shape });
    }
    Ok(out)
}

fn flatten_len(trace: &[LayerShape]) -> usize {
    trace.iter().find(|l| l.layer == LayerSpec::Flatten).map(|l| l.shape[0]).expect("every config has a flatten layer")
}

/// Learnable tensors of the network in forward order. Also used to hold
/// gradients, which have exactly the same structure.
#[derive(Clone, PartialEq, Debug)]
pub struct Parameters<T = f32> {
    pub convs: Vec<ConvKernel<T>>,
    /// Hidden dense layers followed by the output layer.
    pub dense: Vec<DenseParams<T>>,
}

pub type Gradients<T = f32> = Parameters<T>;

impl<T: Scalar> Parameters<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        let trace = infer_shapes(config)?;
        let mut convs = Vec::new();
        let mut channels = config.input[2];
        for &f in &config.conv_filters {
            convs.push(ConvKernel::zeros(channels, f)?);
            channels = f;
        }
        let mut dense = Vec::new();
        let mut width = flatten_len(&trace);
        for units in config.hidden_units.iter().copied().chain([1]) {
            dense.push(DenseParams::zeros(width, units)?);
            width = units;
        }
        Ok(Self { convs, dense })
    }

    /// `(name, tensor)` pairs in a fixed order: conv1.weights, conv1.bias, …, output.bias.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, k) in self.convs.iter().enumerate() {
            out.push((format!("conv{}.weights", i + 1), &k.weights));
            out.push((format!("conv{}.bias", i + 1), &k.bias));
        }
        let last = self.dense.len() - 1;
        for (i, d) in self.dense.iter().enumerate() {
            let layer = if i == last { "output".to_string() } else { format!("dense{}", i + 1) };
            out.push((format!("{layer}.weights"), &d.weights));
            out.push((format!("{layer}.bias"), &d.bias));
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for k in &mut self.convs {
            out.push(&mut k.weights);
            out.push(&mut k.bias);
        }
        for d in &mut self.dense {
            out.push(&mut d.weights);
            out.push(&mut d.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), ModelError> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            t.scale(factor);
        }
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            convs: self.convs.iter().map(|k| ConvKernel { weights: k.weights.cast(), bias: k.bias.cast() }).collect(),
            dense: self.dense.iter().map(|d| DenseParams { weights: d.weights.cast(), bias: d.bias.cast() }).collect(),
        }
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct ModelWeights<T = f32> {
    pub config: ModelConfig,
    pub params: Parameters<T>,
    /// Seed the parameters were initialized from.
    pub seed: u64,
    pub format_version: u32,
}

impl<T: Scalar> ModelWeights<T> {
    /// All-zero weights; every image then scores exactly 0.5.
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        Ok(Self { config: config.clone(), params: Parameters::zeros(config)?, seed: 0, format_version: FORMAT_VERSION })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            config: self.config.clone(),
            params: self.params.cast(),
            seed: self.seed,
            format_version: self.format_version,
        }
    }

    /// SHA-256 over every parameter value, as lowercase hex.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for t in self.params.tensors() {
            for v in t.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Glorot-uniform weights and zero biases, fully determined by `seed`.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<ModelWeights, ModelError> {
    let mut params = Parameters::<f32>::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in &mut params.convs {
        let fan_in = KERNEL * KERNEL * k.in_channels();
        let fan_out = KERNEL * KERNEL * k.filters();
        fill_glorot(&mut k.weights, fan_in, fan_out, &mut rng);
    }
    for d in &mut params.dense {
        let (fan_in, fan_out) = (d.inputs(), d.outputs());
        fill_glorot(&mut d.weights, fan_in, fan_out, &mut rng);
    }
    Ok(ModelWeights { config: config.clone(), params, seed, format_version: FORMAT_VERSION })
}

/// Half-width of the Glorot-uniform interval.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn fill_glorot(t: &mut Tensor, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let limit = glorot_limit(fan_in, fan_out) as f32;
    for v in t.data_mut() {
        *v = (rng.random::<f32>() * 2.0 - 1.0) * limit;
    }
}

/// Intermediate values kept from a forward pass for backpropagation.
struct Trace<T> {
    conv_inputs: Vec<Tensor<T>>,
    conv_pre: Vec<Tensor<T>>,
    pools: Vec<PoolIndex>,
    pooled_shape: Vec<usize>,
    dense_inputs: Vec<Tensor<T>>,
    dense_pre: Vec<Tensor<T>>,
    score: T,
}

fn check_image<T: Scalar>(weights: &ModelWeights<T>, image: &Tensor<T>) -> Result<(), ModelError> {
    if image.shape() != weights.config.input {
        return Err(ModelError::Shape(crate::error::ShapeError::Mismatch {
            op: "network input",
            expected: weights.config.input.to_vec(),
            actual: image.shape().to_vec(),
        }));
    }
    Ok(())
}

fn forward_trace<T: Scalar>(weights: &ModelWeights<T>, image: &Tensor<T>) -> Result<Trace<T>, ModelError> {
    check_image(weights, image)?;
    let p = &weights.params;
    let mut conv_inputs = Vec::with_capacity(p.convs.len());
    let mut conv_pre = Vec::with_capacity(p.convs.len());
    let mut pools = Vec::with_capacity(p.convs.len());
    let mut x = image.clone();
    for k in &p.convs {
        let z = conv2d_forward(&x, k)?;
        let a = relu_forward(&z);
        let (pooled, idx) = maxpool2x2_forward(&a)?;
        conv_inputs.push(x);
        conv_pre.push(z);
        pools.push(idx);
        x = pooled;
    }
    let pooled_shape = x.shape().to_vec();
    let mut h = flatten(&x);
    let mut dense_inputs = Vec::with_capacity(p.dense.len());
    let mut dense_pre = Vec::with_capacity(p.dense.len());
    let last = p.dense.len() - 1;
    for (i, d) in p.dense.iter().enumerate() {
        let z = dense_forward(&h, d)?;
        dense_inputs.push(h);
        h = if i == last { z.clone() } else { relu_forward(&z) };
        dense_pre.push(z);
    }
    let logit = dense_pre[last].data()[0];
    Ok(Trace { conv_inputs, conv_pre, pools, pooled_shape, dense_inputs, dense_pre, score: sigmoid(logit) })
}

/// Probability that `image` shows a diseased retina.
pub fn forward<T: Scalar>(weights: &ModelWeights<T>, image: &Tensor<T>) -> Result<T, ModelError> {
    Ok(forward_trace(weights, image)?.score)
}

/// Score plus the piecewise-linear region the input falls in: every ReLU
/// sign and every pooling winner. Two inputs with equal patterns lie on
/// the same smooth piece of the network.
pub(crate) fn forward_with_pattern<T: Scalar>(
    weights: &ModelWeights<T>,
    image: &Tensor<T>,
) -> Result<(T, Vec<usize>), ModelError> {
    let t = forward_trace(weights, image)?;
    let mut pattern = Vec::new();
    for (z, idx) in t.conv_pre.iter().zip(&t.pools) {
        pattern.extend(z.data().iter().map(|&v| usize::from(v > T::zero())));
        pattern.extend_from_slice(idx.argmax());
    }
    let hidden = t.dense_pre.len() - 1;
    for z in &t.dense_pre[..hidden] {
        pattern.extend(z.data().iter().map(|&v| usize::from(v > T::zero())));
    }
    Ok((t.score, pattern))
}

/// Loss of one labelled image together with the gradient of that loss
/// with respect to every parameter.
#[derive(Clone, Debug)]
pub struct Backprop<T = f32> {
    pub loss: T,
    pub score: T,
    pub grads: Gradients<T>,
}

pub fn backward<T: Scalar>(weights: &ModelWeights<T>, image: &Tensor<T>, y: u8) -> Result<Backprop<T>, ModelError> {
    let trace = forward_trace(weights, image)?;
    let p = &weights.params;
    let loss = bce_loss(trace.score, y);
    let mut grads = Parameters::zeros(&weights.config)?;

    let mut g = Tensor::vector(vec![bce_sigmoid_grad(trace.score, y)])?;
    let last = p.dense.len() - 1;
    for i in (0..p.dense.len()).rev() {
        if i != last {
            g = relu_backward(&trace.dense_pre[i], &g)?;
        }
        let dg = dense_backward(&trace.dense_inputs[i], &p.dense[i], &g)?;
        grads.dense[i].weights = dg.weights;
        grads.dense[i].bias = dg.bias;
        g = dg.input;
    }
    let mut g = unflatten(&g, &trace.pooled_shape)?;
    for i in (0..p.convs.len()).rev() {
        let ga = maxpool2x2_backward(&trace.pools[i], &g)?;
        let gz = relu_backward(&trace.conv_pre[i], &ga)?;
        let (gx, gw, gb) = conv2d_backward_params(&trace.conv_inputs[i], &p.convs[i], &gz, i > 0)?;
        grads.convs[i].weights = gw;
        grads.convs[i].bias = gb;
        if let Some(gx) = gx {
            g = gx;
        }
    }
    Ok(Backprop { loss, score: trace.score, grads })
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Label {
    Diseased,
    Healthy,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Diseased => "Diseased",
            Label::Healthy => "Healthy",
        }
    }

    /// Binary target value: 1 for diseased.
    pub fn target(self) -> u8 {
        match self {
            Label::Diseased => 1,
            Label::Healthy => 0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct Diagnosis {
    pub label: Label,
    pub score: f64,
    pub threshold: f64,
}

impl Diagnosis {
    /// Scores at or above the threshold are diseased.
    pub fn from_score(score: f64, threshold: f64) -> Result<Self, ModelError> {
        check_threshold(threshold)?;
        let label = if score >= threshold { Label::Diseased } else { Label::Healthy };
        Ok(Self { label, score, threshold })
    }
}

pub fn check_threshold(threshold: f64) -> Result<(), ModelError> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(ModelError::Threshold(threshold))
    }
}

pub fn predict(weights: &ModelWeights, image: &Tensor, threshold: f64) -> Result<Diagnosis, ModelError> {
    check_threshold(threshold)?;
    let score = forward(weights, image)?;
    Diagnosis::from_score(f64::from(score), threshold)
}
