//! Seeded random flips and affine warps of training images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Probability of a horizontal mirror.
    pub flip_prob: f64,
    /// Rotation drawn uniformly from ±this many degrees.
    pub rotation_deg: f64,
    /// Per-axis zoom factor drawn from 1 ± this fraction.
    pub zoom: f64,
    /// Shear angle drawn from ±this many degrees.
    pub shear_deg: f64,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self { flip_prob: 0.5, rotation_deg: 20.0, zoom: 0.1, shear_deg: 10.0, seed: 0 }
    }
}

impl AugmentParams {
    /// Parameters under which [`augment`] returns its input unchanged.
    pub fn identity() -> Self {
        Self { flip_prob: 0.0, rotation_deg: 0.0, zoom: 0.0, shear_deg: 0.0, seed: 0 }
    }
}

/// One concrete draw of the random transform.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct Transform {
    pub flip: bool,
    pub rotation_deg: f64,
    pub shear_deg: f64,
    pub zoom_x: f64,
    pub zoom_y: f64,
}

impl Transform {
    /// Draw number `draw_index` from the stream keyed by `params.seed`.
    pub fn sample(params: &AugmentParams, draw_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(draw_index);
        // always consume the same number of values so each field has a fixed slot
        let mut sym = |range: f64| (rng.random::<f64>() * 2.0 - 1.0) * range;
        let flip_u = (sym(1.0) + 1.0) / 2.0;
        let rotation_deg = sym(params.rotation_deg);
        let shear_deg = sym(params.shear_deg);
        let zoom_x = 1.0 + sym(params.zoom);
        let zoom_y = 1.0 + sym(params.zoom);
        Self { flip: flip_u < params.flip_prob, rotation_deg, shear_deg, zoom_x, zoom_y }
    }

    fn is_affine_identity(&self) -> bool {
        self.rotation_deg == 0.0 && self.shear_deg == 0.0 && self.zoom_x == 1.0 && self.zoom_y == 1.0
    }
}

/// Applies the transform drawn for `(params.seed, draw_index)` to an
/// H×W×C image. Pixels sampled from outside the frame take the nearest
/// edge value.
pub fn augment(img: &Tensor, params: &AugmentParams, draw_index: u64) -> Tensor {
    apply(img, &Transform::sample(params, draw_index))
}

pub fn apply(img: &Tensor, t: &Transform) -> Tensor {
    let mut out = if t.is_affine_identity() { img.clone() } else { warp(img, t) };
    if t.flip {
        out = mirror(&out);
    }
    out
}

/// Exact left-right mirror.
pub fn mirror(img: &Tensor) -> Tensor {
    let (h, w, c) = img.hwc().expect("image tensor is H×W×C");
    let src = img.data();
    let mut data = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in 0..w {
            let s = (y * w + (w - 1 - x)) * c;
            data.extend_from_slice(&src[s..s + c]);
        }
    }
    Tensor::new(img.shape(), data).expect("same shape")
}

fn warp(img: &Tensor, t: &Transform) -> Tensor {
    let (h, w, c) = img.hwc().expect("image tensor is H×W×C");
    let (theta, shear) = (t.rotation_deg.to_radians(), t.shear_deg.to_radians());
    // output → source map: rotation · shear · zoom about the image centre
    let (cos, sin) = (theta.cos(), theta.sin());
    let shear_m = [[1.0, -shear.sin()], [0.0, shear.cos()]];
    let rot = [[cos, -sin], [sin, cos]];
    let mut m = [[0.0f64; 2]; 2];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..2).map(|k| rot[i][k] * shear_m[k][j]).sum();
        }
    }
    m[0][0] *= t.zoom_x;
    m[1][0] *= t.zoom_x;
    m[0][1] *= t.zoom_y;
    m[1][1] *= t.zoom_y;

    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let src = img.data();
    let px = |y: usize, x: usize, ch: usize| src[(y * w + x) * c + ch];
    let mut data = Vec::with_capacity(src.len());
    for oy in 0..h {
        for ox in 0..w {
            let (dx, dy) = (ox as f64 - cx, oy as f64 - cy);
            let sx = (cx + m[0][0] * dx + m[0][1] * dy).clamp(0.0, (w - 1) as f64);
            let sy = (cy + m[1][0] * dx + m[1][1] * dy).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (tx, ty) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
            for ch in 0..c {
                let top = px(y0, x0, ch) + (px(y0, x1, ch) - px(y0, x0, ch)) * tx;
                let bot = px(y1, x0, ch) + (px(y1, x1, ch) - px(y1, x0, ch)) * tx;
                data.push((top + (bot - top) * ty).clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(img.shape(), data).expect("same shape")
}
