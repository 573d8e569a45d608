use crate::error::ShapeError;
use crate::tensor::{ensure_same_shape, Scalar, Tensor};

/// Fully connected layer parameters: weights `In × Out`, bias `Out`.
#[derive(Clone, PartialEq, Debug)]
pub struct DenseParams<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self, ShapeError> {
        let [_, out] = weights.shape()[..] else {
            return Err(ShapeError::Rank { expected: 2, actual: weights.shape().to_vec() });
        };
        ensure_same_shape("dense bias", &[out], bias.shape())?;
        Ok(Self { weights, bias })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Result<Self, ShapeError> {
        Self::new(Tensor::zeros(&[inputs, outputs])?, Tensor::zeros(&[outputs])?)
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct DenseGrads<T = f32> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check_input<T: Scalar>(x: &Tensor<T>, p: &DenseParams<T>) -> Result<(), ShapeError> {
    if x.rank() != 1 {
        return Err(ShapeError::Rank { expected: 1, actual: x.shape().to_vec() });
    }
    if x.len() != p.inputs() {
        return Err(ShapeError::Dimension {
            op: "dense",
            dim: "input length",
            expected: p.inputs().to_string(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// `out = xᵀW + b`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, p: &DenseParams<T>) -> Result<Tensor<T>, ShapeError> {
    check_input(x, p)?;
    let out_n = p.outputs();
    let mut out = vec![T::zero(); out_n];
    let w = p.weights.data();
    for (k, &xv) in x.data().iter().enumerate() {
        let row = &w[k * out_n..(k + 1) * out_n];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o = *o + xv * wv;
        }
    }
    for (o, &b) in out.iter_mut().zip(p.bias.data()) {
        *o = *o + b;
    }
    Tensor::vector(out)
}

pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &DenseParams<T>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>, ShapeError> {
    check_input(x, p)?;
    ensure_same_shape("dense_backward", &[p.outputs()], grad_out.shape())?;
    let out_n = p.outputs();
    let g = grad_out.data();
    let w = p.weights.data();
    let mut gx = Vec::with_capacity(x.len());
    let mut gw = vec![T::zero(); w.len()];
    for (k, &xv) in x.data().iter().enumerate() {
        let row = &w[k * out_n..(k + 1) * out_n];
        gx.push(row.iter().zip(g).map(|(&a, &b)| a * b).sum());
        for (s, &gv) in gw[k * out_n..(k + 1) * out_n].iter_mut().zip(g) {
            *s = xv * gv;
        }
    }
    Ok(DenseGrads { input: Tensor::vector(gx)?, weights: Tensor::new(p.weights.shape(), gw)?, bias: grad_out.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::testing::{assert_grad_close, numeric_grad, random_tensor};

    fn params(w: &[f32], inputs: usize, b: &[f32]) -> DenseParams<f32> {
        DenseParams::new(Tensor::new(&[inputs, b.len()], w.to_vec()).unwrap(), Tensor::vector(b.to_vec()).unwrap())
            .unwrap()
    }

    #[test]
    fn forward_examples() {
        let x = Tensor::vector(vec![1.0f32, 2.0]).unwrap();
        let out = dense_forward(&x, &params(&[1.0, 0.0, 0.0, 1.0], 2, &[1.0, 1.0])).unwrap();
        assert_eq!(out.data(), &[2.0, 3.0]);
        let out = dense_forward(&x, &params(&[1.0, 0.0, 0.0, 1.0], 2, &[0.0, 0.0])).unwrap();
        assert_eq!(out, x);
        let out = dense_forward(&x, &params(&[0.0; 6], 2, &[4.0, 4.0, 4.0])).unwrap();
        assert_eq!(out.data(), &[4.0, 4.0, 4.0]);
        let bad = Tensor::vector(vec![1.0f32; 3]).unwrap();
        assert!(dense_forward(&bad, &params(&[0.0; 4], 2, &[0.0, 0.0])).is_err());
    }

    #[test]
    fn scalar_chain_rule() {
        let x = Tensor::vector(vec![3.0f32]).unwrap();
        let p = params(&[2.0], 1, &[0.0]);
        let g = dense_backward(&x, &p, &Tensor::vector(vec![1.0]).unwrap()).unwrap();
        assert_eq!(g.input.data(), &[2.0]);
        assert_eq!(g.weights.data(), &[3.0]);
        assert_eq!(g.bias.data(), &[1.0]);
    }

    #[test]
    fn zero_upstream_gives_zeros() {
        let x = random_tensor::<f32>(&[5], 51);
        let p = DenseParams::new(random_tensor(&[5, 4], 52), random_tensor(&[4], 53)).unwrap();
        let g = dense_backward(&x, &p, &Tensor::zeros(&[4]).unwrap()).unwrap();
        for t in [&g.input, &g.weights, &g.bias] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = random_tensor::<f64>(&[5], 54);
        let p = DenseParams::new(random_tensor(&[5, 4], 55), random_tensor(&[4], 56)).unwrap();
        let r = random_tensor::<f64>(&[4], 57);
        let objective = |x: &Tensor<f64>, p: &DenseParams<f64>| -> f64 {
            dense_forward(x, p).unwrap().data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let g = dense_backward(&x, &p, &r).unwrap();
        assert_grad_close(g.input.data(), &numeric_grad(&x, |x| objective(x, &p)), 1e-5);
        let nw = numeric_grad(&p.weights, |w| objective(&x, &DenseParams::new(w.clone(), p.bias.clone()).unwrap()));
        assert_grad_close(g.weights.data(), &nw, 1e-5);
        let nb = numeric_grad(&p.bias, |b| objective(&x, &DenseParams::new(p.weights.clone(), b.clone()).unwrap()));
        assert_grad_close(g.bias.data(), &nb, 1e-5);
    }
}
