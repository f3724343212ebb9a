//! Preprocessing, augmentation and multi-scale resizing.

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{extract_boundary_gt, Extractor, SampleRecord};
use crate::encoder::ImageTensor;
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, GrayImage, Grid};
use crate::ops::{resize_grid, resize_mask, resize_mask_nearest};

/// Training scales, one drawn per batch.
pub const MULTISCALE_SET: [f64; 3] = [0.75, 1.0, 1.25];

/// Per-channel normalization applied after replicating gray to RGB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    /// ImageNet statistics, matching the pretrained backbone.
    fn default() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

/// Bilinear resize to `size × size`, replicate to three channels and
/// normalize.
pub fn preprocess(image: &GrayImage, size: usize, norm: &Normalization) -> Result<ImageTensor> {
    if image.is_empty() || size == 0 {
        return Err(Error::InputShape("cannot preprocess an empty image".into()));
    }
    let resized = resize_grid(image, size, size);
    let mut data = Vec::with_capacity(3 * size * size);
    for ch in 0..3 {
        let (m, s) = (norm.mean[ch], norm.std[ch]);
        data.extend(resized.data.iter().map(|&v| (v - m) / s));
    }
    ImageTensor::new(size, size, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub hflip_p: f64,
    pub vflip_p: f64,
    pub rotate_p: f64,
    /// Rotation angle drawn uniformly from `±rotate_max_degrees`.
    pub rotate_max_degrees: f64,
    pub crop_p: f64,
    /// Crop side drawn uniformly from `[crop_min_scale, 1]` of the original.
    pub crop_min_scale: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip_p: 0.5,
            vflip_p: 0.0,
            rotate_p: 0.0,
            rotate_max_degrees: 15.0,
            crop_p: 0.0,
            crop_min_scale: 0.8,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            hflip_p: 0.0,
            ..Self::default()
        }
    }

    /// Names of the transforms with nonzero probability.
    pub fn enabled(&self) -> Vec<&'static str> {
        [
            ("hflip", self.hflip_p),
            ("vflip", self.vflip_p),
            ("rotate", self.rotate_p),
            ("crop", self.crop_p),
        ]
        .into_iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(n, _)| n)
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (key, p) in [
            ("augment.hflip_p", self.hflip_p),
            ("augment.vflip_p", self.vflip_p),
            ("augment.rotate_p", self.rotate_p),
            ("augment.crop_p", self.crop_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(key, "probability must lie in [0, 1]"));
            }
        }
        if !(self.crop_min_scale > 0.0 && self.crop_min_scale <= 1.0) {
            return Err(Error::config("augment.crop_min_scale", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

fn rotate_gray(g: &GrayImage, degrees: f64) -> GrayImage {
    let (w, h) = (g.width, g.height);
    let (s, c) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let sample = |y: f64, x: f64| -> f64 {
        if y < 0.0 || x < 0.0 || y > (h - 1) as f64 || x > (w - 1) as f64 {
            return 0.0;
        }
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let v = |r: usize, c: usize| g.get(r, c) as f64;
        (v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx) * (1.0 - fy) + (v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx) * fy
    };
    let mut out = Grid::filled(w, h, 0.0f32);
    for r in 0..h {
        for col in 0..w {
            let (dy, dx) = (r as f64 - cy, col as f64 - cx);
            let sx = c * dx + s * dy + cx;
            let sy = -s * dx + c * dy + cy;
            out.set(r, col, sample(sy, sx) as f32);
        }
    }
    out
}

fn rotate_mask(m: &BinaryMask, degrees: f64) -> BinaryMask {
    let (w, h) = (m.width, m.height);
    let (s, c) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    BinaryMask::from_fn(w, h, |r, col| {
        let (dy, dx) = (r as f64 - cy, col as f64 - cx);
        let sx = (c * dx + s * dy + cx).round();
        let sy = (-s * dx + c * dy + cy).round();
        sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h && m.get(sy as usize, sx as usize)
    })
}

fn crop_gray(g: &GrayImage, top: usize, left: usize, ch: usize, cw: usize) -> GrayImage {
    let mut data = Vec::with_capacity(ch * cw);
    for r in top..top + ch {
        data.extend_from_slice(&g.data[r * g.width + left..r * g.width + left + cw]);
    }
    Grid {
        width: cw,
        height: ch,
        data,
    }
}

fn crop_mask(m: &BinaryMask, top: usize, left: usize, ch: usize, cw: usize) -> BinaryMask {
    BinaryMask::from_fn(cw, ch, |r, c| m.get(top + r, left + c))
}

/// Applies the configured random transforms jointly to image, mask and
/// boundary. Every probability is drawn in a fixed order so one seed gives
/// one augmentation stream regardless of which transforms are on.
pub fn augment<R: Rng + ?Sized>(sample: &SampleRecord, cfg: &AugmentConfig, rng: &mut R) -> SampleRecord {
    let mut s = sample.clone();
    let draws: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>());
    if draws[0] < cfg.hflip_p {
        s.image = s.image.flip_horizontal();
        s.mask = s.mask.flip_horizontal();
        s.boundary = s.boundary.flip_horizontal();
    }
    if draws[1] < cfg.vflip_p {
        s.image = s.image.flip_vertical();
        s.mask = s.mask.flip_vertical();
        s.boundary = s.boundary.flip_vertical();
    }
    let angle = (rng.random::<f64>() * 2.0 - 1.0) * cfg.rotate_max_degrees;
    if draws[2] < cfg.rotate_p {
        s.image = rotate_gray(&s.image, angle);
        s.mask = rotate_mask(&s.mask, angle);
        s.boundary = rotate_mask(&s.boundary, angle);
    }
    let (u_scale, u_top, u_left): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    if draws[3] < cfg.crop_p {
        let scale = cfg.crop_min_scale + (1.0 - cfg.crop_min_scale) * u_scale;
        let (w, h) = (s.image.width, s.image.height);
        let (cw, ch) = (((w as f64 * scale).round() as usize).clamp(1, w), ((h as f64 * scale).round() as usize).clamp(1, h));
        let top = ((h - ch) as f64 * u_top).floor() as usize;
        let left = ((w - cw) as f64 * u_left).floor() as usize;
        s.image = crop_gray(&s.image, top, left, ch, cw);
        s.mask = crop_mask(&s.mask, top, left, ch, cw);
        s.boundary = crop_mask(&s.boundary, top, left, ch, cw);
    }
    s
}

/// `round(base · scale / 32) · 32`.
pub fn multiscale_side(base: usize, scale: f64) -> Result<usize> {
    let side = (base as f64 * scale / 32.0).round() as usize * 32;
    if side < 32 || !scale.is_finite() {
        return Err(Error::Contract(format!(
            "scale {scale} of side {base} gives side {side}, below 32"
        )));
    }
    Ok(side)
}

/// Square, same-sized images with their masks and boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub names: Vec<String>,
    pub images: Vec<GrayImage>,
    pub masks: Vec<BinaryMask>,
    pub boundaries: Vec<BinaryMask>,
}

impl Batch {
    /// Resizes each sample to `side × side`: image bilinear, mask bilinear
    /// then re-binarized, boundary re-extracted from the resized mask.
    pub fn from_samples(samples: &[SampleRecord], side: usize, extractor: Extractor) -> Self {
        let mut b = Batch {
            names: Vec::new(),
            images: Vec::new(),
            masks: Vec::new(),
            boundaries: Vec::new(),
        };
        for s in samples {
            let mask = resize_mask(&s.mask, side, side);
            b.names.push(s.name.clone());
            b.images.push(resize_grid(&s.image, side, side));
            b.boundaries.push(extract_boundary_gt(&mask, extractor));
            b.masks.push(mask);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn side(&self) -> Option<usize> {
        self.images.first().map(|g| g.width)
    }

    /// `(images (B,3,H,W) normalized, masks (B,1,H,W), boundaries (B,1,H,W))`.
    pub fn to_tensors(&self, norm: &Normalization, dtype: DType, device: &Device) -> Result<(Tensor, Tensor, Tensor)> {
        let side = self
            .side()
            .ok_or_else(|| Error::InputShape("empty batch".into()))?;
        let images = self
            .images
            .iter()
            .map(|g| preprocess(g, side, norm))
            .collect::<Result<Vec<_>>>()?;
        let images = ImageTensor::stack(&images, dtype, device)?;
        let stack = |ms: &[BinaryMask]| -> Result<Tensor> {
            let data: Vec<f32> = ms.iter().flat_map(|m| m.data().iter().map(|&v| v as f32)).collect();
            Ok(Tensor::from_vec(data, (ms.len(), 1, side, side), device)?.to_dtype(dtype)?)
        };
        Ok((images, stack(&self.masks)?, stack(&self.boundaries)?))
    }
}

/// Resizes a batch to the side implied by `scale`. Masks are resized
/// bilinearly and re-binarized; boundaries are re-extracted from the
/// resized masks when `reextract` is set, else resized nearest-neighbor.
pub fn multiscale_batch(batch: &Batch, scale: f64, base: usize, reextract: Option<Extractor>) -> Result<Batch> {
    let side = multiscale_side(base, scale)?;
    if batch.side() == Some(side) {
        return Ok(batch.clone());
    }
    let masks: Vec<BinaryMask> = batch.masks.iter().map(|m| resize_mask(m, side, side)).collect();
    let boundaries = match reextract {
        Some(e) => masks.iter().map(|m| extract_boundary_gt(m, e)).collect(),
        None => batch.boundaries.iter().map(|b| resize_mask_nearest(b, side, side)).collect(),
    };
    Ok(Batch {
        names: batch.names.clone(),
        images: batch.images.iter().map(|g| resize_grid(g, side, side)).collect(),
        masks,
        boundaries,
    })
}
