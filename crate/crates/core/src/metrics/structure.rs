//! Structure measure (object + region similarity) and enhanced-alignment
//! measure.

use crate::error::Result;
use crate::grid::{BinaryMask, ProbMap};

use super::{check_shapes, EMeasureInput};

/// Machine epsilon used by the reference formulation.
const EPS: f64 = f64::EPSILON;

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let (mut n, mut sum) = (0usize, 0f64);
    for v in values.clone() {
        n += 1;
        sum += v;
    }
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = sum / n as f64;
    let var = if n > 1 {
        values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    (mean, var.sqrt(), n)
}

fn object_score(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (x, sigma, n) = mean_std(values);
    if n == 0 {
        return 0.0;
    }
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

/// Object-aware similarity: foreground and background distribution scores
/// weighted by the foreground ratio.
pub fn s_object(pred: &ProbMap, gt: &BinaryMask) -> f64 {
    let pairs = || pred.data.iter().zip(gt.data());
    let fg = object_score(pairs().filter(|(_, &g)| g == 1).map(|(&p, _)| p as f64));
    let bg = object_score(pairs().filter(|(_, &g)| g == 0).map(|(&p, _)| 1.0 - p as f64));
    let u = gt.count() as f64 / gt.len() as f64;
    u * fg + (1.0 - u) * bg
}

/// SSIM-style similarity of one rectangular region `[r0, r1) × [c0, c1)`.
pub fn ssim_region(
    pred: &ProbMap,
    gt: &BinaryMask,
    rows: (usize, usize),
    cols: (usize, usize),
) -> f64 {
    let n = (rows.1 - rows.0) * (cols.1 - cols.0);
    if n == 0 {
        return 0.0;
    }
    let (mut sx, mut sy) = (0f64, 0f64);
    for r in rows.0..rows.1 {
        for c in cols.0..cols.1 {
            sx += pred.get(r, c) as f64;
            sy += gt.get(r, c) as u8 as f64;
        }
    }
    let nf = n as f64;
    let (x, y) = (sx / nf, sy / nf);
    let (mut vx, mut vy, mut cxy) = (0f64, 0f64, 0f64);
    for r in rows.0..rows.1 {
        for c in cols.0..cols.1 {
            let dx = pred.get(r, c) as f64 - x;
            let dy = gt.get(r, c) as u8 as f64 - y;
            vx += dx * dx;
            vy += dy * dy;
            cxy += dx * dy;
        }
    }
    let d = nf - 1.0 + EPS;
    let (vx, vy, cxy) = (vx / d, vy / d, cxy / d);
    let alpha = 4.0 * x * y * cxy;
    let beta = (x * x + y * y) * (vx + vy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Foreground centroid as 1-based `(col, row)`, rounded half away from zero.
fn centroid(gt: &BinaryMask) -> (usize, usize) {
    let total = gt.count();
    if total == 0 {
        return (
            (gt.width as f64 / 2.0).round() as usize,
            (gt.height as f64 / 2.0).round() as usize,
        );
    }
    let (mut sc, mut sr) = (0f64, 0f64);
    for (r, c) in gt.coords() {
        sc += (c + 1) as f64;
        sr += (r + 1) as f64;
    }
    (
        (sc / total as f64).round() as usize,
        (sr / total as f64).round() as usize,
    )
}

/// Region-aware similarity: four quadrants split at the foreground
/// centroid, weighted by area.
pub fn s_region(pred: &ProbMap, gt: &BinaryMask) -> f64 {
    let (w, h) = (gt.width, gt.height);
    let (x, y) = centroid(gt);
    let area = (w * h) as f64;
    let w1 = (x * y) as f64 / area;
    let w2 = ((w - x) * y) as f64 / area;
    let w3 = (x * (h - y)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    w1 * ssim_region(pred, gt, (0, y), (0, x))
        + w2 * ssim_region(pred, gt, (0, y), (x, w))
        + w3 * ssim_region(pred, gt, (y, h), (0, x))
        + w4 * ssim_region(pred, gt, (y, h), (x, w))
}

/// `S = (1 − α)·S_o + α·S_r`, clipped at 0; uniform ground truth reduces
/// to the mean (or inverted mean) prediction.
pub fn s_measure(pred: &ProbMap, gt: &BinaryMask, alpha: f64) -> Result<f64> {
    check_shapes((pred.width, pred.height), (gt.width, gt.height))?;
    let n = gt.len() as f64;
    let y = gt.count() as f64 / n;
    let mean_pred = pred.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    Ok(if y == 0.0 {
        1.0 - mean_pred
    } else if y == 1.0 {
        mean_pred
    } else {
        ((1.0 - alpha) * s_object(pred, gt) + alpha * s_region(pred, gt)).max(0.0)
    })
}

/// Mean enhanced alignment `((ξ + 1)² / 4)` with
/// `ξ = 2·a_G·a_S / (a_G² + a_S² + ε)` over mean-centered maps.
pub fn e_measure(pred: &ProbMap, gt: &BinaryMask, mode: EMeasureInput, threshold: f32) -> Result<f64> {
    check_shapes((pred.width, pred.height), (gt.width, gt.height))?;
    let fm: Vec<f64> = match mode {
        EMeasureInput::Binarized => pred.data.iter().map(|&v| (v >= threshold) as u8 as f64).collect(),
        EMeasureInput::Continuous => pred.data.iter().map(|&v| v as f64).collect(),
    };
    let n = fm.len() as f64;
    let fg = gt.count();
    let sum: f64 = if fg == 0 {
        fm.iter().map(|v| 1.0 - v).sum()
    } else if fg == gt.len() {
        fm.iter().sum()
    } else {
        let mu_f = fm.iter().sum::<f64>() / n;
        let mu_g = fg as f64 / n;
        fm.iter()
            .zip(gt.data())
            .map(|(&f, &g)| {
                let af = f - mu_f;
                let ag = g as f64 - mu_g;
                let xi = 2.0 * ag * af / (ag * ag + af * af + EPS);
                (xi + 1.0) * (xi + 1.0) / 4.0
            })
            .sum()
    };
    Ok(sum / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(w: usize, h: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |r, c| (3..9).contains(&r) && (2..7).contains(&c))
    }

    #[test]
    fn self_similarity_is_one() {
        let gt = blob(12, 12);
        let p = gt.to_f32();
        assert!((s_measure(&p, &gt, 0.5).unwrap() - 1.0).abs() < 1e-9);
        assert!((e_measure(&p, &gt, EMeasureInput::Binarized, 0.5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverted_prediction_is_near_zero() {
        let gt = blob(12, 12);
        let p = gt.invert().to_f32();
        assert!(s_measure(&p, &gt, 0.5).unwrap() < 0.1);
        assert!(e_measure(&p, &gt, EMeasureInput::Binarized, 0.5).unwrap() < 1e-9);
    }

    #[test]
    fn uniform_ground_truth() {
        let gt = BinaryMask::zeros(4, 4);
        let p = ProbMap::filled(4, 4, 0.25);
        assert!((s_measure(&p, &gt, 0.5).unwrap() - 0.75).abs() < 1e-7);
        assert_eq!(e_measure(&p, &gt, EMeasureInput::Binarized, 0.5).unwrap(), 1.0);
        let full = gt.invert();
        assert!((s_measure(&p, &full, 0.5).unwrap() - 0.25).abs() < 1e-7);
        assert_eq!(e_measure(&p, &full, EMeasureInput::Binarized, 0.5).unwrap(), 0.0);
    }
}
