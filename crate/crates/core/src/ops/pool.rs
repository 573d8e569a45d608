//! 2×2 max pooling with stride 2. A trailing odd row or column is dropped.

use crate::error::ShapeError;
use crate::tensor::{ensure_same_shape, Scalar, Tensor};

/// Winning input position of every pooling window, kept for the backward pass.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PoolIndex {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    /// Flat input index per output element.
    argmax: Vec<usize>,
}

impl PoolIndex {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

pub fn maxpool2x2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndex), ShapeError> {
    let (h, w, c) = x.hwc()?;
    if h < 2 {
        return Err(ShapeError::Dimension { op: "maxpool2x2", dim: "height", expected: ">= 2".into(), actual: h });
    }
    if w < 2 {
        return Err(ShapeError::Dimension { op: "maxpool2x2", dim: "width", expected: ">= 2".into(), actual: w });
    }
    let (oh, ow) = (h / 2, w / 2);
    let data = x.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for i in 0..oh {
        for j in 0..ow {
            for ch in 0..c {
                // first maximum in row-major window order wins ties
                let mut best = ((2 * i) * w + 2 * j) * c + ch;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * i + di) * w + 2 * j + dj) * c + ch;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    let output_shape = vec![oh, ow, c];
    Ok((Tensor::new(&output_shape, out)?, PoolIndex { input_shape: x.shape().to_vec(), output_shape, argmax }))
}

/// Routes each upstream gradient entry to the input position that won its window.
pub fn maxpool2x2_backward<T: Scalar>(index: &PoolIndex, grad_out: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    ensure_same_shape("maxpool2x2_backward", &index.output_shape, grad_out.shape())?;
    let mut grad = Tensor::zeros(&index.input_shape)?;
    let gd = grad.data_mut();
    for (&pos, &g) in index.argmax.iter().zip(grad_out.data()) {
        gd[pos] = gd[pos] + g;
    }
    Ok(grad)
}
