//! Seeded inputs shared by the benchmarks.

use fundus_core::ops::ConvKernel;
use fundus_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Convolution shapes `(side, in channels, filters)` of the five conv layers of the standard model.
pub const STANDARD_CONVS: [(usize, usize, usize); 5] =
    [(150, 3, 16), (74, 16, 32), (36, 32, 64), (17, 64, 64), (7, 64, 64)];

pub fn uniform(shape: &[usize], lo: f32, hi: f32, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("non-empty shape")
}

/// Random input and 3×3 kernel for one conv layer.
pub fn conv_case(side: usize, cin: usize, filters: usize, seed: u64) -> (Tensor, ConvKernel) {
    let x = uniform(&[side, side, cin], 0.0, 1.0, seed);
    let w = uniform(&[3, 3, cin, filters], -0.1, 0.1, seed + 1);
    let b = uniform(&[filters], -0.1, 0.1, seed + 2);
    (x, ConvKernel::new(w, b).expect("matching bias"))
}

/// Multiply-accumulates of one valid 3×3 convolution.
pub fn conv_macs(side: usize, cin: usize, filters: usize) -> u64 {
    ((side - 2) * (side - 2) * 9 * cin * filters) as u64
}
