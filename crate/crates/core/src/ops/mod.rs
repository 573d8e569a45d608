//! Forward and backward kernels for every layer type in the network.
//!
//! All kernels are generic over [`Scalar`] so the same code runs at `f32`
//! for training and at `f64` under the gradient checker.

mod activation;
mod conv;
mod dense;
mod pool;
#[cfg(test)]
pub(crate) mod testing;

pub use activation::{bce_loss, bce_mean, bce_sigmoid_grad, relu_backward, relu_forward, sigmoid, BCE_EPSILON};
pub(crate) use conv::conv2d_backward_params;
pub use conv::{conv2d_backward, conv2d_forward, conv2d_forward_direct, ConvGrads, ConvKernel, KERNEL};
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseParams};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward, PoolIndex};

use crate::error::ShapeError;
use crate::tensor::{Scalar, Tensor};

/// Row-major reshape to a vector.
pub fn flatten<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::vector(x.data().to_vec()).expect("non-empty tensor flattens")
}

/// Inverse of [`flatten`].
pub fn unflatten<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>, ShapeError> {
    Tensor::new(shape, x.data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use testing::random_tensor;

    #[test]
    fn flatten_is_row_major() {
        let x = Tensor::new(&[2, 2, 1], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(flatten(&x).data(), &[1.0, 2.0, 3.0, 4.0]);
        let x = Tensor::<f32>::zeros(&[2, 2, 64]).unwrap();
        assert_eq!(flatten(&x).shape(), &[256]);
    }

    #[test]
    fn unflatten_restores() {
        let x = random_tensor::<f32>(&[3, 4, 5], 61);
        assert_eq!(unflatten(&flatten(&x), &[3, 4, 5]).unwrap(), x);
        assert!(unflatten(&flatten(&x), &[3, 4, 4]).is_err());
    }
}
