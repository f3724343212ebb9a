//! Static figures: training-loss curve and boundary overlays.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, GrayImage};

pub const PRED_COLOR: [u8; 3] = [255, 48, 48];
pub const GT_COLOR: [u8; 3] = [48, 220, 72];

/// Slice in gray with the prediction's inner boundary in red and the
/// ground truth's in green, at the slice's native resolution. Where both
/// coincide the ground-truth color wins.
pub fn overlay(image: &GrayImage, pred: &BinaryMask, gt: &BinaryMask) -> Result<RgbImage> {
    let (w, h) = (image.width, image.height);
    if (pred.width, pred.height) != (w, h) || (gt.width, gt.height) != (w, h) {
        return Err(Error::InputShape("overlay inputs differ in size".into()));
    }
    let (pb, gb) = (pred.inner_boundary(), gt.inner_boundary());
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        if gb.get(r, c) {
            Rgb(GT_COLOR)
        } else if pb.get(r, c) {
            Rgb(PRED_COLOR)
        } else {
            let v = (image.get(r, c).clamp(0.0, 1.0) * 255.0).round() as u8;
            Rgb([v, v, v])
        }
    }))
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path).map_err(|e| Error::image(path, e))
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: [u8; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, Rgb(color));
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Loss per step as a polyline on a white canvas, with a moving average
/// over `smooth` steps drawn on top. The y axis spans `[0, max loss]`.
pub fn loss_curve(losses: &[f64], width: u32, height: u32, smooth: usize) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let margin = 24i64;
    let (w, h) = (width as i64 - 2 * margin, height as i64 - 2 * margin);
    let axis = [40, 40, 40];
    line(&mut img, (margin, margin), (margin, margin + h), axis);
    line(&mut img, (margin, margin + h), (margin + w, margin + h), axis);
    let finite: Vec<f64> = losses.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < 2 || w <= 0 || h <= 0 {
        return img;
    }
    let max = finite.iter().copied().fold(f64::MIN, f64::max).max(1e-12);
    let n = finite.len();
    let point = |i: usize, v: f64| {
        (
            margin + (i as f64 / (n - 1) as f64 * w as f64).round() as i64,
            margin + h - (v / max * h as f64).round() as i64,
        )
    };
    for i in 1..n {
        line(&mut img, point(i - 1, finite[i - 1]), point(i, finite[i]), [150, 180, 230]);
    }
    let k = smooth.max(1);
    let avg: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(k - 1);
            finite[lo..=i].iter().sum::<f64>() / (i - lo + 1) as f64
        })
        .collect();
    for i in 1..n {
        line(&mut img, point(i - 1, avg[i - 1]), point(i, avg[i]), [20, 60, 170]);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_colors_boundaries() {
        let img = GrayImage::filled(8, 8, 0.5);
        let gt = BinaryMask::from_fn(8, 8, |r, c| (2..6).contains(&r) && (2..6).contains(&c));
        let pred = BinaryMask::from_fn(8, 8, |r, c| (1..7).contains(&r) && (1..7).contains(&c));
        let o = overlay(&img, &pred, &gt).unwrap();
        assert_eq!(o.get_pixel(2, 2).0, GT_COLOR);
        assert_eq!(o.get_pixel(1, 1).0, PRED_COLOR);
        assert_eq!(o.get_pixel(0, 0).0, [128, 128, 128]);
    }

    #[test]
    fn curve_has_ink() {
        let losses: Vec<f64> = (0..50).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let img = loss_curve(&losses, 200, 120, 5);
        let inked = img.pixels().filter(|p| p.0 == [20, 60, 170]).count();
        assert!(inked > 50);
    }
}
