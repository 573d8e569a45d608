//! Finite-difference verification of the network's backward pass.
//!
//! Runs the whole network at `f64` and compares every analytic parameter
//! gradient against a central difference of the scalar loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::ModelError;
use crate::network::{backward, forward_with_pattern, init_weights, ModelConfig, ModelWeights};
use crate::ops::bce_loss;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Test hook: perturb the analytic gradient of this tensor before comparing.
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-3, tolerance: 1e-4, corrupt: None }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct GradCheckRow {
    pub tensor: String,
    pub layer_type: &'static str,
    pub entries: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub passed: bool,
}

#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub label: u8,
    pub loss: f64,
    pub rows: Vec<GradCheckRow>,
    pub passed: bool,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Gradient check of the network built from `config`, with weights, biases,
/// image and label all derived from `seed`.
pub fn gradcheck(config: &ModelConfig, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport, ModelError> {
    let mut weights: ModelWeights<f64> = init_weights(config, seed)?.cast();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    // non-zero biases so no ReLU sits exactly on its kink
    for t in weights.params.tensors_mut() {
        if t.rank() == 1 {
            for v in t.data_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    let [h, w, c] = config.input;
    let image = Tensor::new(&[h, w, c], (0..h * w * c).map(|_| rng.random::<f64>()).collect())?;
    let label = (seed % 2) as u8;

    let bp = backward(&weights, &image, label)?;
    let names: Vec<String> = bp.grads.named_tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = bp.grads.tensors().into_iter().map(|t| t.data().to_vec()).collect();

    let mut rows = Vec::with_capacity(names.len());
    for (ti, name) in names.iter().enumerate() {
        let mut grad = analytic[ti].clone();
        if opts.corrupt.as_deref() == Some(name.as_str()) {
            for g in &mut grad {
                *g = *g * 1.5 + 1e-2;
            }
        }
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for (ei, &a) in grad.iter().enumerate() {
            let numeric = central_difference(&mut weights, &image, label, ti, ei, opts.step)?;
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        rows.push(GradCheckRow {
            tensor: name.clone(),
            layer_type: layer_type(name),
            entries: grad.len(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            passed: max_rel < opts.tolerance,
        });
    }
    let passed = rows.iter().all(|r| r.passed);
    Ok(GradCheckReport { seed, step: opts.step, tolerance: opts.tolerance, label, loss: bp.loss, rows, passed })
}

/// How often the step is divided by ten when a probe crosses a ReLU or
/// pooling boundary, where the loss is not differentiable.
const MAX_STEP_REFINEMENTS: u32 = 4;

/// Central difference of the loss in one parameter. If `orig ± step`
/// leaves the piecewise-smooth region around `orig`, the step shrinks
/// until both probes stay inside it or the refinements run out.
fn central_difference(
    weights: &mut ModelWeights<f64>,
    image: &Tensor<f64>,
    label: u8,
    tensor: usize,
    entry: usize,
    step: f64,
) -> Result<f64, ModelError> {
    let orig = weights.params.tensors_mut()[tensor].data()[entry];
    let mut eval_at = |v: f64| -> Result<(f64, Vec<usize>), ModelError> {
        weights.params.tensors_mut()[tensor].data_mut()[entry] = v;
        let (score, pattern) = forward_with_pattern(weights, image)?;
        Ok((bce_loss(score, label), pattern))
    };
    let (_, centre) = eval_at(orig)?;
    let mut h = step;
    let mut estimate = 0.0;
    for attempt in 0..=MAX_STEP_REFINEMENTS {
        let (up, up_pattern) = eval_at(orig + h)?;
        let (down, down_pattern) = eval_at(orig - h)?;
        estimate = (up - down) / (2.0 * h);
        if (up_pattern == centre && down_pattern == centre) || attempt == MAX_STEP_REFINEMENTS {
            break;
        }
        h /= 10.0;
    }
    weights.params.tensors_mut()[tensor].data_mut()[entry] = orig;
    Ok(estimate)
}

fn layer_type(name: &str) -> &'static str {
    if name.starts_with("conv") {
        "conv2d"
    } else if name.starts_with("output") {
        "dense+sigmoid"
    } else {
        "dense+relu"
    }
}

impl GradCheckReport {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "gradcheck seed={} step={:e} tol={:e} label={} loss={:.6}\n",
            self.seed, self.step, self.tolerance, self.label, self.loss
        );
        s.push_str(&format!(
            "{:<16} {:<14} {:>7} {:>12} {:>12}  result\n",
            "tensor", "layer", "entries", "max_rel_err", "max_abs_err"
        ));
        for r in &self.rows {
            s.push_str(&format!(
                "{:<16} {:<14} {:>7} {:>12.3e} {:>12.3e}  {}\n",
                r.tensor,
                r.layer_type,
                r.entries,
                r.max_rel_err,
                r.max_abs_err,
                if r.passed { "PASS" } else { "FAIL" }
            ));
        }
        s.push_str(if self.passed { "overall: PASS\n" } else { "overall: FAIL\n" });
        s
    }
}
