use crate::error::ShapeError;
use crate::tensor::{ensure_same_shape, Scalar, Tensor};

/// Clamp applied to predictions before taking logs in [`bce_loss`].
pub const BCE_EPSILON: f64 = 1e-7;

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad_out` through where `x > 0`. The subgradient at exactly zero is 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, ShapeError> {
    ensure_same_shape("relu_backward", x.shape(), grad_out.shape())?;
    let data = x.data().iter().zip(grad_out.data()).map(|(&v, &g)| if v > T::zero() { g } else { T::zero() }).collect();
    Tensor::new(x.shape(), data)
}

/// Logistic function, evaluated so that neither branch exponentiates a
/// large positive number.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Binary cross-entropy of one prediction against a 0/1 target.
pub fn bce_loss<T: Scalar>(y_hat: T, y: u8) -> T {
    let eps = T::of(BCE_EPSILON);
    let p = y_hat.max(eps).min(T::one() - eps);
    if y == 1 {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

/// Mean binary cross-entropy over a batch.
pub fn bce_mean<T: Scalar>(y_hat: &[T], y: &[u8]) -> T {
    let n = T::of(y_hat.len() as f64);
    y_hat.iter().zip(y).map(|(&p, &t)| bce_loss(p, t)).sum::<T>() / n
}

/// d(bce(sigmoid(z), y))/dz = sigmoid(z) − y.
pub fn bce_sigmoid_grad<T: Scalar>(y_hat: T, y: u8) -> T {
    y_hat - T::of(f64::from(y))
}
