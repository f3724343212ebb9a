//! Synthetic CT-like slices with lesion masks, for smoke tests and
//! overfit checks.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grid::{BinaryMask, GrayImage, Grid};
use crate::imageio;

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    fn contains(&self, r: f64, c: f64) -> bool {
        let (dy, dx) = ((r - self.cy) / self.ry, (c - self.cx) / self.rx);
        dy * dy + dx * dx <= 1.0
    }
}

/// One slice: a bright body, two dark lungs, and one to three brighter
/// lesions inside the lungs. The mask marks the lesions.
pub fn slice(size: usize, rng: &mut impl Rng) -> (GrayImage, BinaryMask) {
    let s = size as f64;
    let body = Ellipse {
        cy: s * 0.5,
        cx: s * 0.5,
        ry: s * 0.42,
        rx: s * 0.47,
    };
    let lungs = [0.32, 0.68].map(|fx| Ellipse {
        cy: s * rng.random_range(0.45..0.55),
        cx: s * fx,
        ry: s * rng.random_range(0.25..0.32),
        rx: s * rng.random_range(0.13..0.17),
    });
    let n_lesions = rng.random_range(1..=3);
    let lesions: Vec<Ellipse> = (0..n_lesions)
        .map(|_| {
            let lung = &lungs[rng.random_range(0..2)];
            Ellipse {
                cy: lung.cy + lung.ry * rng.random_range(-0.5..0.5),
                cx: lung.cx + lung.rx * rng.random_range(-0.4..0.4),
                ry: s * rng.random_range(0.05..0.12),
                rx: s * rng.random_range(0.05..0.10),
            }
        })
        .collect();
    let mut image = Grid::filled(size, size, 0.0f32);
    let mut mask = BinaryMask::zeros(size, size);
    let (body_level, lung_level, lesion_level) = (0.55, 0.12, rng.random_range(0.45..0.7));
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let in_lung = lungs.iter().any(|l| l.contains(y, x));
            let lesion = in_lung && lesions.iter().any(|l| l.contains(y, x));
            let base = if lesion {
                lesion_level
            } else if in_lung {
                lung_level
            } else if body.contains(y, x) {
                body_level
            } else {
                0.0
            };
            let noise: f64 = rng.random_range(-0.04..0.04);
            image.set(r, c, (base + noise).clamp(0.0, 1.0) as f32);
            mask.set(r, c, lesion);
        }
    }
    (image, mask)
}

/// `n` slices from a seeded stream.
pub fn generate(n: usize, size: usize, seed: u64) -> Vec<(GrayImage, BinaryMask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| slice(size, &mut rng)).collect()
}

/// Writes `n` slices as a raw source: `images/slice_NNN.png` and
/// `masks/slice_NNN.png`.
pub fn write_raw_dir(dir: &Path, n: usize, size: usize, seed: u64) -> Result<()> {
    for (i, (image, mask)) in generate(n, size, seed).into_iter().enumerate() {
        imageio::write_gray(&image, &dir.join(format!("images/slice_{i:03}.png")))?;
        imageio::write_mask(&mask, &dir.join(format!("masks/slice_{i:03}.png")))?;
    }
    Ok(())
}
