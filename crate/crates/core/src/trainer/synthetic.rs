//! Seeded synthetic paired datasets for desk-scale experiments.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{save_image, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Target equals the raw image.
    Identity,
    /// Target is `0.8 * raw + 0.1` on every channel.
    Affine,
    /// A fixed global color transform followed by a smooth spatial field
    /// whose strength depends on the image's mean brightness.
    AffineField,
}

/// Random content: a color gradient, a few soft blobs, and fine per-pixel
/// texture.
pub fn random_scene(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Image {
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.2..0.8));
    let grad: [[f64; 2]; 3] =
        std::array::from_fn(|_| [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)]);
    let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..rng.gen_range(2..5))
        .map(|_| {
            (
                [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
                rng.gen_range(0.1..0.35),
                std::array::from_fn(|_| rng.gen_range(-0.3..0.3)),
            )
        })
        .collect();
    let texture_amp = rng.gen_range(0.03..0.12);
    let texture: Vec<f64> = (0..width * height * 3)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let (w, h) = (width.max(1) as f64, height.max(1) as f64);
    Image::from_fn(width, height, |x, y, c| {
        let u = (x as f64 + 0.5) / w;
        let v = (y as f64 + 0.5) / h;
        let mut val = base[c] + grad[c][0] * (u - 0.5) + grad[c][1] * (v - 0.5);
        for (center, radius, color) in &blobs {
            let d2 = (u - center[0]).powi(2) + (v - center[1]).powi(2);
            val += color[c] * (-d2 / (2.0 * radius * radius)).exp();
        }
        val += texture_amp * texture[(c * height + y) * width + x];
        val.clamp(0.0, 1.0)
    })
}

fn channel_means(image: &Image) -> [f64; 3] {
    let n = (image.width() * image.height()) as f64;
    std::array::from_fn(|c| image.plane(c).iter().sum::<f64>() / n)
}

/// Color mix applied by the `AffineField` target before the field.
pub const FIELD_TASK_MIX: [[f64; 3]; 3] = [[0.8, 0.2, 0.0], [0.1, 0.7, 0.1], [0.0, 0.3, 0.6]];
pub const FIELD_TASK_OFFSET: [f64; 3] = [0.06, 0.04, 0.08];

/// The global part of the `AffineField` target.
pub fn content_affine(raw: &Image) -> Image {
    Image::from_fn(raw.width(), raw.height(), |x, y, c| {
        let p = raw.pixel(x, y);
        let m = &FIELD_TASK_MIX[c];
        FIELD_TASK_OFFSET[c] + m[0] * p[0] + m[1] * p[1] + m[2] * p[2]
    })
}

pub fn mean_luminance(image: &Image) -> f64 {
    let m = channel_means(image);
    (m[0] + m[1] + m[2]) / 3.0
}

/// Zero-mean radial field: positive in the center, negative at the corners.
pub fn vignette(width: usize, height: usize) -> Vec<f64> {
    let (w, h) = (width as f64, height as f64);
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let u = (x as f64 + 0.5) / w - 0.5;
            let v = (y as f64 + 0.5) / h - 0.5;
            out.push(-(u * u + v * v));
        }
    }
    let mean = out.iter().sum::<f64>() / out.len().max(1) as f64;
    let peak = out
        .iter()
        .fold(0.0f64, |m, v| m.max((v - mean).abs()))
        .max(1e-12);
    out.iter().map(|v| (v - mean) / peak).collect()
}

/// Strength of the `AffineField` vignette: a fixed part plus a part that
/// grows as the image gets darker.
pub fn field_amplitude(raw: &Image) -> f64 {
    0.08 + 2.0 * (0.5 - mean_luminance(raw))
}

/// Global transform followed by a brightness-dependent vignette.
pub fn affine_field_target(raw: &Image) -> Image {
    let global = content_affine(raw);
    let amplitude = field_amplitude(raw);
    let field = vignette(raw.width(), raw.height());
    Image::from_fn(raw.width(), raw.height(), |x, y, c| {
        global.get(x, y, c) + amplitude * field[y * raw.width() + x]
    })
    .clamped()
}

pub fn make_target(kind: SyntheticKind, raw: &Image) -> Image {
    match kind {
        SyntheticKind::Identity => raw.clone(),
        SyntheticKind::Affine => raw.map(|v| 0.8 * v + 0.1),
        SyntheticKind::AffineField => affine_field_target(raw),
    }
}

/// `count` pairs of `width x height` images. Pair `i` depends only on
/// `(seed, i)`.
pub fn generate_pairs(
    kind: SyntheticKind,
    count: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Vec<(Image, Image)> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let raw = random_scene(&mut rng, width, height);
            let target = make_target(kind, &raw);
            (raw, target)
        })
        .collect()
}

/// Writes pairs as 8-bit PNGs into `dir/raw` and `dir/target`, named
/// `img0000.png`, `img0001.png`, ...
pub fn write_pairs(dir: &Path, pairs: &[(Image, Image)]) -> Result<()> {
    for sub in ["raw", "target"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for (i, (raw, target)) in pairs.iter().enumerate() {
        let name = format!("img{i:04}.png");
        save_image(raw, dir.join("raw").join(&name))?;
        save_image(target, dir.join("target").join(&name))?;
    }
    Ok(())
}
