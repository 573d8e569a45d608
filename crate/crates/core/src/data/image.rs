//! Image decoding and resizing to the network input.

use std::path::{Path, PathBuf};

use crate::error::DataError;
use crate::tensor::Tensor;

pub const INPUT_SIZE: usize = 150;

/// Decodes PNG or JPEG bytes to RGB, bilinearly resizes to 150×150 and
/// scales channel values from 0..=255 to [0, 1].
pub fn decode_and_resize(bytes: &[u8]) -> Result<Tensor, DataError> {
    let img = image::load_from_memory(bytes).map_err(|e| DataError::Decode(e.to_string()))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let resized = resize_bilinear(rgb.as_raw(), h as usize, w as usize, 3, INPUT_SIZE, INPUT_SIZE);
    let data = resized.into_iter().map(|v| v / 255.0).collect();
    Ok(Tensor::new(&[INPUT_SIZE, INPUT_SIZE, 3], data)?)
}

pub fn load_image(path: &Path) -> Result<Tensor, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    decode_and_resize(&bytes)
}

/// `<dir>/<id>.png`, falling back to `.jpg` and `.jpeg`.
pub fn find_image(dir: &Path, id: &str) -> Result<PathBuf, DataError> {
    for ext in ["png", "jpg", "jpeg", "JPG", "PNG"] {
        let p = dir.join(format!("{id}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(DataError::MissingImage { id: id.to_string(), dir: dir.to_path_buf() })
}

/// Half-pixel-centred bilinear resampling of an interleaved `u8` image,
/// with edge clamping. Output values stay on the 0..=255 scale.
fn resize_bilinear(src: &[u8], h: usize, w: usize, c: usize, oh: usize, ow: usize) -> Vec<f32> {
    let sy = h as f32 / oh as f32;
    let sx = w as f32 / ow as f32;
    let axis = |o: usize, scale: f32, len: usize| -> (usize, usize, f32) {
        let pos = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
        let lo = (pos.floor() as usize).min(len - 1);
        let hi = (lo + 1).min(len - 1);
        (lo, hi, pos - lo as f32)
    };
    let px = |y: usize, x: usize, ch: usize| f32::from(src[(y * w + x) * c + ch]);
    let mut out = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        let (y0, y1, ty) = axis(oy, sy, h);
        for ox in 0..ow {
            let (x0, x1, tx) = axis(ox, sx, w);
            for ch in 0..c {
                // a + (b - a)·t keeps constant regions exactly constant
                let top = px(y0, x0, ch) + (px(y0, x1, ch) - px(y0, x0, ch)) * tx;
                let bot = px(y1, x0, ch) + (px(y1, x1, ch) - px(y1, x0, ch)) * tx;
                out.push(top + (bot - top) * ty);
            }
        }
    }
    out
}

/// Encodes an RGB image given per-pixel colours as PNG bytes.
pub fn encode_png(width: u32, height: u32, pixel: impl Fn(u32, u32) -> [u8; 3]) -> Vec<u8> {
    let img = image::RgbImage::from_fn(width, height, |x, y| image::Rgb(pixel(x, y)));
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).expect("in-memory PNG encoding");
    buf.into_inner()
}
