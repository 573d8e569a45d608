//! Synthetic fundus-like images for tests, smoke runs and demos.
//!
//! Healthy images are a dark disc on black; diseased images add a bright
//! blob whose position varies with the image index. A single bright
//! region separates the classes, so a small network fits them quickly.

use super::batch::ImageRecord;
use crate::tensor::Tensor;

/// RGB value of pixel `(x, y)` of fixture image `index`.
pub fn fixture_pixel(index: usize, diseased: bool, size: u32, x: u32, y: u32) -> [u8; 3] {
    let s = size as f64;
    let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
    let disc = ((fx - s / 2.0).powi(2) + (fy - s / 2.0).powi(2)).sqrt() < s * 0.45;
    if !disc {
        return [0, 0, 0];
    }
    // slight per-image tint so no two images are identical
    let tint = (index % 5) as u8 * 6;
    let mut px = [70 + tint, 30 + tint / 2, 15];
    if diseased {
        let angle = index as f64 * 2.399;
        let (bx, by) = (s / 2.0 + s * 0.2 * angle.cos(), s / 2.0 + s * 0.2 * angle.sin());
        if ((fx - bx).powi(2) + (fy - by).powi(2)).sqrt() < s * 0.12 {
            px = [240, 230, 160];
        }
    }
    px
}

/// Fixture image as a `size`×`size`×3 tensor in [0, 1].
pub fn fixture_image(index: usize, diseased: bool, size: usize) -> Tensor {
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size as u32 {
        for x in 0..size as u32 {
            data.extend(fixture_pixel(index, diseased, size as u32, x, y).map(|v| f32::from(v) / 255.0));
        }
    }
    Tensor::new(&[size, size, 3], data).expect("positive size")
}

/// `per_class` diseased and `per_class` healthy records, alternating.
pub fn separable_fixture(per_class: usize, size: usize) -> Vec<ImageRecord> {
    (0..2 * per_class)
        .map(|i| {
            let diseased = i % 2 == 0;
            ImageRecord {
                id: format!("fixture{i:03}"),
                pixels: fixture_image(i, diseased, size),
                label: u8::from(diseased),
            }
        })
        .collect()
}
