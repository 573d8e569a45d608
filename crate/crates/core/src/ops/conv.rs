//! 3×3 valid convolution, stride 1.

use crate::error::ShapeError;
use crate::tensor::{ensure_same_shape, Scalar, Tensor};

/// Spatial size of every convolution filter in the network.
pub const KERNEL: usize = 3;

/// Filter bank of shape `K × K × in_channels × filters` plus one bias per filter.
#[derive(Clone, PartialEq, Debug)]
pub struct ConvKernel<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvKernel<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self, ShapeError> {
        let [k1, k2, _cin, filters] = weights.shape()[..] else {
            return Err(ShapeError::Rank { expected: 4, actual: weights.shape().to_vec() });
        };
        if k1 != KERNEL || k2 != KERNEL {
            return Err(ShapeError::Dimension {
                op: "conv kernel",
                dim: "kernel size",
                expected: format!("{KERNEL}x{KERNEL}"),
                actual: if k1 != KERNEL { k1 } else { k2 },
            });
        }
        ensure_same_shape("conv bias", &[filters], bias.shape())?;
        Ok(Self { weights, bias })
    }

    pub fn zeros(in_channels: usize, filters: usize) -> Result<Self, ShapeError> {
        Self::new(Tensor::zeros(&[KERNEL, KERNEL, in_channels, filters])?, Tensor::zeros(&[filters])?)
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn filters(&self) -> usize {
        self.weights.shape()[3]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Clone, PartialEq, Debug)]
pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check_input<T: Scalar>(input: &Tensor<T>, kernel: &ConvKernel<T>) -> Result<(usize, usize, usize), ShapeError> {
    let (h, w, c) = input.hwc()?;
    if h < KERNEL {
        return Err(ShapeError::Dimension { op: "conv2d", dim: "height", expected: format!(">= {KERNEL}"), actual: h });
    }
    if w < KERNEL {
        return Err(ShapeError::Dimension { op: "conv2d", dim: "width", expected: format!(">= {KERNEL}"), actual: w });
    }
    if c != kernel.in_channels() {
        return Err(ShapeError::Dimension {
            op: "conv2d",
            dim: "input channels",
            expected: kernel.in_channels().to_string(),
            actual: c,
        });
    }
    Ok((h, w, c))
}

/// Reference convolution: one accumulator per output element, summed over
/// kernel row, kernel column, then input channel.
pub fn conv2d_forward_direct<T: Scalar>(input: &Tensor<T>, kernel: &ConvKernel<T>) -> Result<Tensor<T>, ShapeError> {
    let (h, w, cin) = check_input(input, kernel)?;
    let f_count = kernel.filters();
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    let x = input.data();
    let wt = kernel.weights.data();
    let bias = kernel.bias.data();
    let mut out = vec![T::zero(); oh * ow * f_count];
    for i in 0..oh {
        for j in 0..ow {
            for f in 0..f_count {
                let mut sum = T::zero();
                for a in 0..KERNEL {
                    for b in 0..KERNEL {
                        for c in 0..cin {
                            let xv = x[((i + a) * w + (j + b)) * cin + c];
                            let wv = wt[((a * KERNEL + b) * cin + c) * f_count + f];
                            sum = sum + xv * wv;
                        }
                    }
                }
                out[(i * ow + j) * f_count + f] = sum + bias[f];
            }
        }
    }
    Tensor::new(&[oh, ow, f_count], out)
}

/// Convolution with the filter axis innermost so the accumulation vectorizes.
///
/// Each output element is summed in the same order as
/// [`conv2d_forward_direct`], so the two agree bit for bit.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, kernel: &ConvKernel<T>) -> Result<Tensor<T>, ShapeError> {
    let (h, w, cin) = check_input(input, kernel)?;
    let f_count = kernel.filters();
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    let mut out = vec![T::zero(); oh * ow * f_count];
    correlate(input.data(), h, w, cin, kernel.weights.data(), f_count, &mut out);
    for px in out.chunks_exact_mut(f_count) {
        for (o, &bv) in px.iter_mut().zip(kernel.bias.data()) {
            *o = *o + bv;
        }
    }
    Tensor::new(&[oh, ow, f_count], out)
}

/// Filters per accumulator vector in the blocked kernels.
const LANE: usize = 16;
/// Output columns handled together, so each weight vector loaded feeds
/// several independent accumulators.
const COL_BLOCK: usize = 8;

/// `out[i,j,f] = Σ_{a,b,c} x[i+a, j+b, c]·wt[a,b,c,f]`, summed over `a`,
/// then `b`, then `c`, starting from zero. `out` must be zeroed.
fn correlate<T: Scalar>(x: &[T], h: usize, w: usize, cin: usize, wt: &[T], f_count: usize, out: &mut [T]) {
    if !f_count.is_multiple_of(LANE) {
        return correlate_any(x, h, w, cin, wt, f_count, out);
    }
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    for i in 0..oh {
        let mut j = 0;
        while j + COL_BLOCK <= ow {
            correlate_tile::<T, COL_BLOCK>(x, w, cin, wt, f_count, i, j, ow, out);
            j += COL_BLOCK;
        }
        for j in j..ow {
            correlate_tile::<T, 1>(x, w, cin, wt, f_count, i, j, ow, out);
        }
    }
}

/// `Q` adjacent output pixels of row `i` starting at column `j`, all filters.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn correlate_tile<T: Scalar, const Q: usize>(
    x: &[T],
    w: usize,
    cin: usize,
    wt: &[T],
    f_count: usize,
    i: usize,
    j: usize,
    ow: usize,
    out: &mut [T],
) {
    for f0 in (0..f_count).step_by(LANE) {
        let mut acc = [[T::zero(); LANE]; Q];
        for a in 0..KERNEL {
            for b in 0..KERNEL {
                let px = ((i + a) * w + j + b) * cin;
                let xs = &x[px..px + Q * cin];
                let pw = (a * KERNEL + b) * cin;
                for c in 0..cin {
                    let wrow: &[T; LANE] = wt[(pw + c) * f_count + f0..][..LANE].try_into().expect("lane");
                    for (q, acc) in acc.iter_mut().enumerate() {
                        let xv = xs[q * cin + c];
                        for l in 0..LANE {
                            acc[l] = acc[l] + xv * wrow[l];
                        }
                    }
                }
            }
        }
        for (q, acc) in acc.iter().enumerate() {
            let o = (i * ow + j + q) * f_count + f0;
            out[o..o + LANE].copy_from_slice(acc);
        }
    }
}

fn correlate_any<T: Scalar>(x: &[T], h: usize, w: usize, cin: usize, wt: &[T], f_count: usize, out: &mut [T]) {
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    for i in 0..oh {
        for j in 0..ow {
            let acc = &mut out[(i * ow + j) * f_count..(i * ow + j + 1) * f_count];
            for a in 0..KERNEL {
                for b in 0..KERNEL {
                    let px = ((i + a) * w + (j + b)) * cin;
                    let pw = (a * KERNEL + b) * cin * f_count;
                    for c in 0..cin {
                        let xv = x[px + c];
                        let wrow = &wt[pw + c * f_count..pw + (c + 1) * f_count];
                        for (s, &wv) in acc.iter_mut().zip(wrow) {
                            *s = *s + xv * wv;
                        }
                    }
                }
            }
        }
    }
}

/// Exact gradients of [`conv2d_forward`] for the upstream gradient `grad_out`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>, ShapeError> {
    let (gi, weights, bias) = conv2d_backward_params(input, kernel, grad_out, true)?;
    Ok(ConvGrads { input: gi.expect("input gradient requested"), weights, bias })
}

/// Backward pass that can skip the input gradient, which the first layer
/// never needs. Returns `(input grad, weight grad, bias grad)`.
#[allow(clippy::type_complexity)]
pub(crate) fn conv2d_backward_params<T: Scalar>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>), ShapeError> {
    let (h, w, cin) = check_input(input, kernel)?;
    let f_count = kernel.filters();
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    ensure_same_shape("conv2d_backward", &[oh, ow, f_count], grad_out.shape())?;
    let g = grad_out.data();

    let mut gb = vec![T::zero(); f_count];
    for px in g.chunks_exact(f_count) {
        for (b, &gv) in gb.iter_mut().zip(px) {
            *b = *b + gv;
        }
    }
    let mut gw = vec![T::zero(); kernel.weights.len()];
    weight_grad(input.data(), w, cin, g, oh, ow, f_count, &mut gw);

    let gi = if need_input { Some(input_grad(g, oh, ow, f_count, kernel.weights.data(), cin)?) } else { None };
    Ok((gi, Tensor::new(kernel.weights.shape(), gw)?, Tensor::new(&[f_count], gb)?))
}

/// `gw[a,b,c,f] = Σ_{i,j} x[i+a, j+b, c]·g[i,j,f]`.
#[allow(clippy::too_many_arguments)]
fn weight_grad<T: Scalar>(x: &[T], w: usize, cin: usize, g: &[T], oh: usize, ow: usize, f_count: usize, gw: &mut [T]) {
    if !f_count.is_multiple_of(LANE) {
        return weight_grad_any(x, w, cin, g, oh, ow, f_count, gw);
    }
    for a in 0..KERNEL {
        for b in 0..KERNEL {
            let mut c = 0;
            while c < cin {
                // channel blocks give independent accumulation chains
                c += match cin - c {
                    r if r >= 8 => weight_grad_tile::<T, 8>(x, w, cin, g, oh, ow, f_count, a, b, c, gw),
                    r if r >= 4 => weight_grad_tile::<T, 4>(x, w, cin, g, oh, ow, f_count, a, b, c, gw),
                    3 => weight_grad_tile::<T, 3>(x, w, cin, g, oh, ow, f_count, a, b, c, gw),
                    r if r >= 2 => weight_grad_tile::<T, 2>(x, w, cin, g, oh, ow, f_count, a, b, c, gw),
                    _ => weight_grad_tile::<T, 1>(x, w, cin, g, oh, ow, f_count, a, b, c, gw),
                };
            }
        }
    }
}

/// Gradient rows for kernel tap `(a, b)` and channels `c0..c0+CB`.
/// Returns `CB`.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn weight_grad_tile<T: Scalar, const CB: usize>(
    x: &[T],
    w: usize,
    cin: usize,
    g: &[T],
    oh: usize,
    ow: usize,
    f_count: usize,
    a: usize,
    b: usize,
    c0: usize,
    gw: &mut [T],
) -> usize {
    let row0 = (a * KERNEL + b) * cin + c0;
    // An opaque unit stride stops LLVM from vectorizing across the channel
    // block, which would fold the independent accumulators into one chain.
    let stride = std::hint::black_box(1usize);
    for f0 in (0..f_count).step_by(LANE) {
        let mut acc = [[T::zero(); LANE]; CB];
        for i in 0..oh {
            let xrow = &x[((i + a) * w + b) * cin..];
            let grow = &g[i * ow * f_count..(i + 1) * ow * f_count];
            for j in 0..ow {
                let gv: &[T; LANE] = grow[j * f_count + f0..][..LANE].try_into().expect("lane");
                let xs = &xrow[j * cin + c0..][..CB];
                for (cc, acc) in acc.iter_mut().enumerate() {
                    let xv = xs[cc * stride];
                    for l in 0..LANE {
                        acc[l] = acc[l] + xv * gv[l];
                    }
                }
            }
        }
        for (cc, acc) in acc.iter().enumerate() {
            gw[(row0 + cc) * f_count + f0..][..LANE].copy_from_slice(acc);
        }
    }
    CB
}

#[allow(clippy::too_many_arguments)]
fn weight_grad_any<T: Scalar>(
    x: &[T],
    w: usize,
    cin: usize,
    g: &[T],
    oh: usize,
    ow: usize,
    f_count: usize,
    gw: &mut [T],
) {
    for i in 0..oh {
        for j in 0..ow {
            let grow = &g[(i * ow + j) * f_count..(i * ow + j + 1) * f_count];
            for a in 0..KERNEL {
                for b in 0..KERNEL {
                    let px = ((i + a) * w + (j + b)) * cin;
                    let pw = (a * KERNEL + b) * cin * f_count;
                    for c in 0..cin {
                        let xv = x[px + c];
                        let row = &mut gw[pw + c * f_count..pw + (c + 1) * f_count];
                        for (s, &gv) in row.iter_mut().zip(grow) {
                            *s = *s + xv * gv;
                        }
                    }
                }
            }
        }
    }
}

/// Input gradient as a valid correlation of the zero-padded upstream
/// gradient with the spatially flipped, channel-transposed kernel.
fn input_grad<T: Scalar>(
    g: &[T],
    oh: usize,
    ow: usize,
    f_count: usize,
    wt: &[T],
    cin: usize,
) -> Result<Tensor<T>, ShapeError> {
    let pad = KERNEL - 1;
    let (ph, pw) = (oh + 2 * pad, ow + 2 * pad);
    let mut padded = vec![T::zero(); ph * pw * f_count];
    for i in 0..oh {
        let src = &g[i * ow * f_count..(i + 1) * ow * f_count];
        let dst = ((i + pad) * pw + pad) * f_count;
        padded[dst..dst + src.len()].copy_from_slice(src);
    }
    let mut flipped = vec![T::zero(); wt.len()];
    for a in 0..KERNEL {
        for b in 0..KERNEL {
            let (fa, fb) = (KERNEL - 1 - a, KERNEL - 1 - b);
            for c in 0..cin {
                for f in 0..f_count {
                    flipped[((fa * KERNEL + fb) * f_count + f) * cin + c] =
                        wt[((a * KERNEL + b) * cin + c) * f_count + f];
                }
            }
        }
    }
    let (h, w) = (oh + pad, ow + pad);
    let mut gx = vec![T::zero(); h * w * cin];
    correlate(&padded, ph, pw, f_count, &flipped, cin, &mut gx);
    Tensor::new(&[h, w, cin], gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::testing::{assert_grad_close, numeric_grad, random_tensor};

    #[test]
    fn ones_filter_sums_nine_ones() {
        let input = Tensor::full(&[3, 3, 1], 1.0f32).unwrap();
        let kernel = ConvKernel::new(Tensor::full(&[3, 3, 1, 1], 1.0).unwrap(), Tensor::zeros(&[1]).unwrap()).unwrap();
        let out = conv2d_forward(&input, &kernel).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn standard_first_layer_shape() {
        let input = Tensor::<f32>::zeros(&[150, 150, 3]).unwrap();
        let kernel = ConvKernel::zeros(3, 16).unwrap();
        let out = conv2d_forward(&input, &kernel).unwrap();
        assert_eq!(out.shape(), &[148, 148, 16]);
    }

    #[test]
    fn zero_kernel_gives_bias_everywhere() {
        let input = random_tensor::<f32>(&[7, 5, 2], 3);
        let mut kernel = ConvKernel::zeros(2, 3).unwrap();
        kernel.bias = Tensor::vector(vec![0.25, -1.5, 4.0]).unwrap();
        let out = conv2d_forward(&input, &kernel).unwrap();
        for px in out.data().chunks(3) {
            assert_eq!(px, &[0.25, -1.5, 4.0]);
        }
    }

    #[test]
    fn shape_errors_name_the_dimension() {
        let kernel = ConvKernel::<f32>::zeros(3, 2).unwrap();
        let err = conv2d_forward(&Tensor::zeros(&[2, 5, 3]).unwrap(), &kernel).unwrap_err();
        assert!(matches!(err, ShapeError::Dimension { dim: "height", .. }));
        let err = conv2d_forward(&Tensor::zeros(&[5, 5, 4]).unwrap(), &kernel).unwrap_err();
        assert!(matches!(err, ShapeError::Dimension { dim: "input channels", .. }));
        let err = conv2d_backward(&Tensor::zeros(&[5, 5, 3]).unwrap(), &kernel, &Tensor::zeros(&[2, 3, 2]).unwrap())
            .unwrap_err();
        assert!(matches!(err, ShapeError::Mismatch { .. }));
        assert!(ConvKernel::<f32>::new(Tensor::zeros(&[5, 5, 1, 1]).unwrap(), Tensor::zeros(&[1]).unwrap()).is_err());
    }

    #[test]
    fn fast_path_matches_direct_loop() {
        for (h, w, cin, f, seed) in [(6, 6, 2, 2, 1), (17, 15, 3, 16, 2), (9, 12, 32, 64, 3)] {
            let input = random_tensor::<f32>(&[h, w, cin], seed);
            let kernel =
                ConvKernel::new(random_tensor(&[3, 3, cin, f], seed + 10), random_tensor(&[f], seed + 20)).unwrap();
            let fast = conv2d_forward(&input, &kernel).unwrap();
            let direct = conv2d_forward_direct(&input, &kernel).unwrap();
            assert_eq!(fast, direct);
        }
    }

    /// Textbook scatter form of the backward pass.
    fn reference_backward(x: &Tensor<f64>, k: &ConvKernel<f64>, g: &Tensor<f64>) -> ConvGrads<f64> {
        let (h, w, cin) = x.hwc().unwrap();
        let f_count = k.filters();
        let (oh, ow) = (h - 2, w - 2);
        let mut gx = Tensor::zeros(x.shape()).unwrap();
        let mut gw = Tensor::zeros(k.weights.shape()).unwrap();
        let mut gb = Tensor::zeros(&[f_count]).unwrap();
        for i in 0..oh {
            for j in 0..ow {
                for f in 0..f_count {
                    let gv = g.data()[(i * ow + j) * f_count + f];
                    gb.data_mut()[f] += gv;
                    for a in 0..3 {
                        for b in 0..3 {
                            for c in 0..cin {
                                let xi = ((i + a) * w + j + b) * cin + c;
                                let wi = ((a * 3 + b) * cin + c) * f_count + f;
                                gw.data_mut()[wi] += x.data()[xi] * gv;
                                gx.data_mut()[xi] += k.weights.data()[wi] * gv;
                            }
                        }
                    }
                }
            }
        }
        ConvGrads { input: gx, weights: gw, bias: gb }
    }

    #[test]
    fn blocked_backward_matches_reference() {
        for (h, w, cin, f, seed) in [(6, 6, 2, 2, 1), (13, 11, 3, 16, 2), (9, 14, 16, 32, 3), (7, 7, 64, 64, 4)] {
            let x = random_tensor::<f64>(&[h, w, cin], seed);
            let k = ConvKernel::new(random_tensor(&[3, 3, cin, f], seed + 10), random_tensor(&[f], seed + 20)).unwrap();
            let g = random_tensor::<f64>(&[h - 2, w - 2, f], seed + 30);
            let fast = conv2d_backward(&x, &k, &g).unwrap();
            let slow = reference_backward(&x, &k, &g);
            for (got, want) in [(&fast.input, &slow.input), (&fast.weights, &slow.weights), (&fast.bias, &slow.bias)] {
                assert_eq!(got.shape(), want.shape());
                for (a, b) in got.data().iter().zip(want.data()) {
                    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let input = random_tensor::<f32>(&[5, 5, 2], 4);
        let kernel = ConvKernel::new(random_tensor(&[3, 3, 2, 3], 5), random_tensor(&[3], 6)).unwrap();
        let grads = conv2d_backward(&input, &kernel, &Tensor::zeros(&[3, 3, 3]).unwrap()).unwrap();
        assert!(grads.input.data().iter().all(|&v| v == 0.0));
        assert!(grads.weights.data().iter().all(|&v| v == 0.0));
        assert!(grads.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_output_bias_gradient_is_upstream() {
        let input = random_tensor::<f32>(&[3, 3, 2], 7);
        let kernel = ConvKernel::new(random_tensor(&[3, 3, 2, 2], 8), random_tensor(&[2], 9)).unwrap();
        let g = Tensor::new(&[1, 1, 2], vec![0.75, -2.0]).unwrap();
        let grads = conv2d_backward(&input, &kernel, &g).unwrap();
        assert_eq!(grads.bias.data(), &[0.75, -2.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let input = random_tensor::<f64>(&[6, 6, 2], 11);
        let kernel = ConvKernel::new(random_tensor(&[3, 3, 2, 2], 12), random_tensor(&[2], 13)).unwrap();
        // Scalar objective: L = sum(r * conv(x)) for a fixed random r.
        let r = random_tensor::<f64>(&[4, 4, 2], 14);
        let objective = |x: &Tensor<f64>, k: &ConvKernel<f64>| -> f64 {
            let out = conv2d_forward(x, k).unwrap();
            out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let grads = conv2d_backward(&input, &kernel, &r).unwrap();

        let num_x = numeric_grad(&input, |x| objective(x, &kernel));
        assert_grad_close(grads.input.data(), &num_x, 1e-5);
        let num_w = numeric_grad(&kernel.weights, |wt| {
            objective(&input, &ConvKernel::new(wt.clone(), kernel.bias.clone()).unwrap())
        });
        assert_grad_close(grads.weights.data(), &num_w, 1e-5);
        let num_b = numeric_grad(&kernel.bias, |b| {
            objective(&input, &ConvKernel::new(kernel.weights.clone(), b.clone()).unwrap())
        });
        assert_grad_close(grads.bias.data(), &num_b, 1e-5);
    }

    #[test]
    fn params_only_backward_matches_full() {
        let input = random_tensor::<f32>(&[8, 7, 3], 21);
        let kernel = ConvKernel::new(random_tensor(&[3, 3, 3, 4], 22), random_tensor(&[4], 23)).unwrap();
        let g = random_tensor::<f32>(&[6, 5, 4], 24);
        let full = conv2d_backward(&input, &kernel, &g).unwrap();
        let (gi, gw, gb) = conv2d_backward_params(&input, &kernel, &g, false).unwrap();
        assert!(gi.is_none());
        assert_eq!(gw, full.weights);
        assert_eq!(gb, full.bias);
    }
}
