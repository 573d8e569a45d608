//! Dense row-major tensors of rank 1 to 4.
//!
//! Images and feature maps are stored height × width × channels, so the
//! channel index varies fastest. Convolution kernels are stored
//! K × K × in-channels × filters.

use std::fmt::Debug;

use num_traits::Float;

use crate::error::ShapeError;

/// Floating-point element type for tensors.
///
/// Training and inference run at `f32`; the gradient-check harness
/// instantiates the same kernels at `f64`.
pub trait Scalar: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

pub const MAX_RANK: usize = 4;

#[derive(Clone, PartialEq, Debug)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, ShapeError> {
        check_shape(shape)?;
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(ShapeError::DataLength { shape: shape.to_vec(), expected, actual: data.len() });
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self, ShapeError> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self, ShapeError> {
        check_shape(shape)?;
        let len = shape.iter().product();
        Ok(Self { shape: shape.to_vec(), data: vec![value; len] })
    }

    /// Rank-1 tensor over `data`.
    pub fn vector(data: Vec<T>) -> Result<Self, ShapeError> {
        let len = data.len();
        Self::new(&[len], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self, ShapeError> {
        Self::new(shape, self.data)
    }

    /// Height, width and channels of a rank-3 tensor.
    pub fn hwc(&self) -> Result<(usize, usize, usize), ShapeError> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(ShapeError::Rank { expected: 3, actual: self.shape.clone() }),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<(), ShapeError> {
        ensure_same_shape("add_assign", &self.shape, &other.shape)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.data {
            *v = *v * factor;
        }
    }

    /// Converts every element to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    /// Sub-tensor `index` along the leading axis, e.g. one image of a batch.
    pub fn outer(&self, index: usize) -> Result<Self, ShapeError> {
        if self.rank() < 2 {
            return Err(ShapeError::Rank { expected: 2, actual: self.shape.clone() });
        }
        let n = self.shape[0];
        if index >= n {
            return Err(ShapeError::Index { index, len: n });
        }
        let inner: usize = self.shape[1..].iter().product();
        Ok(Self { shape: self.shape[1..].to_vec(), data: self.data[index * inner..(index + 1) * inner].to_vec() })
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[Self]) -> Result<Self, ShapeError> {
        let first = items.first().ok_or(ShapeError::Empty)?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        check_shape(&shape)?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for item in items {
            ensure_same_shape("stack", &first.shape, &item.shape)?;
            data.extend_from_slice(&item.data);
        }
        Ok(Self { shape, data })
    }
}

fn check_shape(shape: &[usize]) -> Result<(), ShapeError> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(ShapeError::Unsupported(shape.to_vec()));
    }
    if shape.contains(&0) {
        return Err(ShapeError::Unsupported(shape.to_vec()));
    }
    Ok(())
}

pub(crate) fn ensure_same_shape(op: &'static str, expected: &[usize], actual: &[usize]) -> Result<(), ShapeError> {
    if expected != actual {
        return Err(ShapeError::Mismatch { op, expected: expected.to_vec(), actual: actual.to_vec() });
    }
    Ok(())
}
