//! Procedural natural-looking images for offline corpora.
//!
//! Each image is a smooth two-colour gradient overlaid with soft-edged
//! shapes, plus a low-frequency ripple and faint sensor noise.
//! Output depends only on `(seed, index)`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image_model::RawImage;
use crate::Result;

fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn random_colour(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

enum Shape {
    Ellipse { cx: f32, cy: f32, rx: f32, ry: f32, angle: f32 },
    Rect { cx: f32, cy: f32, hw: f32, hh: f32, angle: f32 },
}

impl Shape {
    /// Signed distance-like value in pixels, negative inside.
    fn distance(&self, x: f32, y: f32) -> f32 {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry, angle } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                let r = ((u / rx).powi(2) + (v / ry).powi(2)).sqrt();
                (r - 1.0) * rx.min(ry)
            }
            Shape::Rect { cx, cy, hw, hh, angle } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                (u.abs() - hw).max(v.abs() - hh)
            }
        }
    }
}

/// One `size × size` RGB image determined by `(seed, index)`.
pub fn synth_image(size: usize, seed: u64, index: u64) -> RawImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let s = size as f32;
    let c0 = random_colour(&mut rng);
    let c1 = random_colour(&mut rng);
    let theta: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (gs, gc) = theta.sin_cos();

    let n_shapes = rng.random_range(3..9);
    let shapes: Vec<(Shape, [f32; 3], f32)> = (0..n_shapes)
        .map(|_| {
            let cx = rng.random_range(0.0..s);
            let cy = rng.random_range(0.0..s);
            let a = rng.random_range(0.06..0.3) * s;
            let b = rng.random_range(0.06..0.3) * s;
            let angle = rng.random_range(0.0..std::f32::consts::PI);
            let shape = if rng.random_bool(0.5) {
                Shape::Ellipse { cx, cy, rx: a, ry: b, angle }
            } else {
                Shape::Rect { cx, cy, hw: a, hh: b, angle }
            };
            let opacity = rng.random_range(0.5..1.0);
            (shape, random_colour(&mut rng), opacity)
        })
        .collect();

    let freq = rng.random_range(2.0..10.0) * std::f32::consts::TAU / s;
    let phi: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (rs, rc) = phi.sin_cos();
    let ripple = rng.random_range(0.0..0.08);

    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f32 + 0.5, y as f32 + 0.5);
            let t = (((xf - s / 2.0) * gc + (yf - s / 2.0) * gs) / s + 0.5).clamp(0.0, 1.0);
            let mut px = [0f32; 3];
            for ch in 0..3 {
                px[ch] = c0[ch] * (1.0 - t) + c1[ch] * t;
            }
            for (shape, colour, opacity) in &shapes {
                let cover = opacity * (1.0 - smoothstep(-1.0, 1.0, shape.distance(xf, yf)));
                for ch in 0..3 {
                    px[ch] = px[ch] * (1.0 - cover) + colour[ch] * cover;
                }
            }
            let wave = ripple * (freq * (xf * rc + yf * rs)).sin();
            for v in px {
                let noise: f32 = rng.random_range(-0.012..0.012);
                pixels.push(((v + wave + noise).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    RawImage::new(size, size, 3, pixels).expect("three channels")
}

/// `count` images keyed `img_00000.png`, `img_00001.png`, ...
pub fn synth_corpus(count: usize, size: usize, seed: u64) -> BTreeMap<String, RawImage> {
    (0..count)
        .map(|i| (format!("img_{i:05}.png"), synth_image(size, seed, i as u64)))
        .collect()
}

/// Writes [`synth_corpus`] into `dir` as PNG files.
pub fn write_corpus(dir: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    for (name, img) in synth_corpus(count, size, seed) {
        img.save_png(&dir.join(name))?;
    }
    Ok(())
}
