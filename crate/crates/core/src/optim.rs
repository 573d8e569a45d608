//! RMSprop.

use serde::{Deserialize, Serialize};

use crate::error::ShapeError;
use crate::tensor::{ensure_same_shape, Tensor};

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f32,
    pub rho: f32,
    pub epsilon: f32,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, rho: 0.9, epsilon: 1e-7 }
    }
}

/// Running mean of squared gradients for one parameter tensor.
#[derive(Clone, PartialEq, Debug)]
pub struct RmsPropState {
    pub v: Tensor,
    pub rho: f32,
    pub epsilon: f32,
    pub learning_rate: f32,
}

impl RmsPropState {
    pub fn new(shape: &[usize], config: RmsPropConfig) -> Result<Self, ShapeError> {
        Ok(Self {
            v: Tensor::zeros(shape)?,
            rho: config.rho,
            epsilon: config.epsilon,
            learning_rate: config.learning_rate,
        })
    }

    /// `v ← ρv + (1−ρ)g²`, then `param ← param − lr·g / (√v + ε)`.
    pub fn step(&mut self, param: &mut Tensor, grad: &Tensor) -> Result<(), ShapeError> {
        ensure_same_shape("rmsprop_step", param.shape(), grad.shape())?;
        ensure_same_shape("rmsprop_step", param.shape(), self.v.shape())?;
        let (rho, eps, lr) = (self.rho, self.epsilon, self.learning_rate);
        for ((p, v), &g) in param.data_mut().iter_mut().zip(self.v.data_mut()).zip(grad.data()) {
            *v = rho * *v + (1.0 - rho) * g * g;
            *p -= lr * g / (v.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(len: usize) -> RmsPropState {
        RmsPropState::new(&[len], RmsPropConfig::default()).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = state(3);
        s.v = Tensor::vector(vec![0.5, 0.0, 2.0]).unwrap();
        let v0 = s.v.clone();
        let mut p = Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap();
        let p0 = p.clone();
        s.step(&mut p, &Tensor::zeros(&[3]).unwrap()).unwrap();
        assert_eq!(p, p0);
        // v decays toward zero but only when already non-zero; entries stay non-negative
        assert!(s.v.data().iter().zip(v0.data()).all(|(a, b)| *a >= 0.0 && *a <= *b));
    }

    #[test]
    fn first_step_size_is_independent_of_gradient_magnitude() {
        // lr / sqrt(1 - rho) = 0.001 / sqrt(0.1)
        let expected = -0.001f64 / 0.1f64.sqrt();
        for g in [1e-3f32, 0.5, 7.0, 300.0] {
            let mut s = state(1);
            let mut p = Tensor::vector(vec![0.0]).unwrap();
            s.step(&mut p, &Tensor::vector(vec![g]).unwrap()).unwrap();
            let delta = p.data()[0] as f64;
            assert!((delta - expected).abs() < 1e-6, "g={g}: {delta} vs {expected}");
        }
        assert!((expected + 0.0031623).abs() < 1e-7);
    }

    #[test]
    fn identical_histories_stay_identical() {
        let mut s = state(2);
        let mut p = Tensor::vector(vec![0.3, 0.3]).unwrap();
        for g in [0.1f32, -2.0, 0.7, 0.0, 5.5] {
            s.step(&mut p, &Tensor::vector(vec![g, g]).unwrap()).unwrap();
            assert_eq!(p.data()[0].to_bits(), p.data()[1].to_bits());
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut s = state(2);
        let mut p = Tensor::zeros(&[2]).unwrap();
        assert!(s.step(&mut p, &Tensor::zeros(&[3]).unwrap()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn accumulator_stays_non_negative(gs in proptest::collection::vec(-1e3f32..1e3, 1..20)) {
            let mut s = state(1);
            let mut p = Tensor::vector(vec![0.0]).unwrap();
            for g in gs {
                s.step(&mut p, &Tensor::vector(vec![g]).unwrap()).unwrap();
                proptest::prop_assert!(s.v.data()[0] >= 0.0);
                proptest::prop_assert!(p.data()[0].is_finite());
            }
        }
    }
}
