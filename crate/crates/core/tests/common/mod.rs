//! Literal reference implementations and fixtures shared by the
//! integration tests. These are deliberately naive: plain loops over
//! pixel lists, written from the metric and loss definitions without
//! reusing library code.

#![allow(dead_code)]

use bsnet::grid::{BinaryMask, ProbMap};
use rand::Rng;

pub fn rand_mask(rng: &mut impl Rng, w: usize, h: usize) -> BinaryMask {
    match rng.random_range(0..6) {
        0 => BinaryMask::zeros(w, h),
        1 => {
            let p: f64 = rng.random_range(0.05..0.95);
            let bits: Vec<u8> = (0..w * h).map(|_| rng.random_bool(p) as u8).collect();
            BinaryMask::new(w, h, bits).unwrap()
        }
        _ => {
            // A few random rectangles and disks.
            let mut m = BinaryMask::zeros(w, h);
            for _ in 0..rng.random_range(1..4) {
                let (cy, cx) = (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64);
                let r = rng.random_range(1.0..(w.min(h) as f64 / 2.0));
                let disk = rng.random_bool(0.5);
                for y in 0..h {
                    for x in 0..w {
                        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                        let inside = if disk {
                            dy * dy + dx * dx <= r * r
                        } else {
                            dy.abs() <= r && dx.abs() <= r * 0.7
                        };
                        if inside {
                            m.set(y, x, true);
                        }
                    }
                }
            }
            m
        }
    }
}

/// Probability map loosely correlated with `gt`.
pub fn rand_prob(rng: &mut impl Rng, gt: &BinaryMask) -> ProbMap {
    let mode = rng.random_range(0..4);
    let data = (0..gt.len())
        .map(|i| {
            let g = gt.data()[i] as f32;
            match mode {
                0 => rng.random::<f32>(),
                1 => (g * 0.8 + rng.random::<f32>() * 0.2).clamp(0.0, 1.0),
                2 => if rng.random_bool(0.9) { g } else { 1.0 - g },
                _ => (g + rng.random_range(-0.6f32..0.6)).clamp(0.0, 1.0),
            }
        })
        .collect();
    ProbMap::new(gt.width, gt.height, data).unwrap()
}

pub fn pixels(m: &BinaryMask) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for r in 0..m.height {
        for c in 0..m.width {
            if m.data()[r * m.width + c] == 1 {
                v.push((r, c));
            }
        }
    }
    v
}

pub fn oracle_dsc(pred: &BinaryMask, gt: &BinaryMask) -> f64 {
    let (p, g) = (pixels(pred), pixels(gt));
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    let inter = p.iter().filter(|x| g.contains(x)).count();
    2.0 * inter as f64 / (p.len() + g.len()) as f64
}

pub fn oracle_sen(pred: &BinaryMask, gt: &BinaryMask) -> f64 {
    let (p, g) = (pixels(pred), pixels(gt));
    if g.is_empty() {
        return 1.0;
    }
    g.iter().filter(|x| p.contains(x)).count() as f64 / g.len() as f64
}

pub fn oracle_prec(pred: &BinaryMask, gt: &BinaryMask) -> f64 {
    let (p, g) = (pixels(pred), pixels(gt));
    if p.is_empty() {
        return 1.0;
    }
    p.iter().filter(|x| g.contains(x)).count() as f64 / p.len() as f64
}

pub fn oracle_mae(pred: &ProbMap, gt: &BinaryMask) -> f64 {
    let mut s = 0.0;
    for i in 0..gt.len() {
        s += (pred.data[i] as f64 - gt.data()[i] as f64).abs();
    }
    s / gt.len() as f64
}

/// Foreground pixels with a background 4-neighbor (outside counts as
/// background).
pub fn oracle_boundary(m: &BinaryMask) -> Vec<(usize, usize)> {
    let on = |r: isize, c: isize| {
        r >= 0 && c >= 0 && (r as usize) < m.height && (c as usize) < m.width && m.get(r as usize, c as usize)
    };
    pixels(m)
        .into_iter()
        .filter(|&(r, c)| {
            let (r, c) = (r as isize, c as isize);
            !(on(r - 1, c) && on(r + 1, c) && on(r, c - 1) && on(r, c + 1))
        })
        .collect()
}

pub fn oracle_hd(pred: &BinaryMask, gt: &BinaryMask) -> f64 {
    let (a, b) = (oracle_boundary(pred), oracle_boundary(gt));
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return ((gt.width.pow(2) + gt.height.pow(2)) as f64).sqrt(),
        _ => {}
    }
    let directed = |from: &[(usize, usize)], to: &[(usize, usize)]| {
        from.iter()
            .map(|&(r, c)| {
                to.iter()
                    .map(|&(r2, c2)| {
                        let (dr, dc) = (r as f64 - r2 as f64, c as f64 - c2 as f64);
                        (dr * dr + dc * dc).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    directed(&a, &b).max(directed(&b, &a))
}

// --- S-measure, transcribed from the published MATLAB reference. ---

fn matlab_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn matlab_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = matlab_mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn object(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let x = matlab_mean(values);
    let sigma = matlab_std(values);
    2.0 * x / (x * x + 1.0 + sigma + f64::EPSILON)
}

fn s_object(pred: &[f64], gt: &[bool]) -> f64 {
    let fg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| g).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| !g).map(|(&p, _)| 1.0 - p).collect();
    let u = fg.len() as f64 / gt.len() as f64;
    u * object(&fg) + (1.0 - u) * object(&bg)
}

fn ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    if pred.is_empty() {
        return 0.0;
    }
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let sigma_x2 = pred.iter().map(|p| (p - x).powi(2)).sum::<f64>() / (n - 1.0 + f64::EPSILON);
    let sigma_y2 = gt.iter().map(|g| (g - y).powi(2)).sum::<f64>() / (n - 1.0 + f64::EPSILON);
    let sigma_xy = pred.iter().zip(gt).map(|(p, g)| (p - x) * (g - y)).sum::<f64>() / (n - 1.0 + f64::EPSILON);
    let alpha = 4.0 * x * y * sigma_xy;
    let beta = (x * x + y * y) * (sigma_x2 + sigma_y2);
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// MATLAB `round`: half away from zero.
fn mround(v: f64) -> usize {
    v.round() as usize
}

fn s_region(pred: &[f64], gt: &[bool], w: usize, h: usize) -> f64 {
    // Centroid with 1-based coordinates.
    let total: usize = gt.iter().filter(|&&g| g).count();
    let (x, y) = if total == 0 {
        (mround(w as f64 / 2.0), mround(h as f64 / 2.0))
    } else {
        let (mut sx, mut sy) = (0.0, 0.0);
        for r in 0..h {
            for c in 0..w {
                if gt[r * w + c] {
                    sx += (c + 1) as f64;
                    sy += (r + 1) as f64;
                }
            }
        }
        (mround(sx / total as f64), mround(sy / total as f64))
    };
    let quad = |r0: usize, r1: usize, c0: usize, c1: usize| {
        let mut p = Vec::new();
        let mut g = Vec::new();
        for r in r0..r1 {
            for c in c0..c1 {
                p.push(pred[r * w + c]);
                g.push(gt[r * w + c] as u8 as f64);
            }
        }
        ssim(&p, &g)
    };
    let area = (w * h) as f64;
    let w1 = (x * y) as f64 / area;
    let w2 = ((w - x) * y) as f64 / area;
    let w3 = (x * (h - y)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    w1 * quad(0, y, 0, x) + w2 * quad(0, y, x, w) + w3 * quad(y, h, 0, x) + w4 * quad(y, h, x, w)
}

pub fn oracle_s_measure(pred: &ProbMap, gt: &BinaryMask, alpha: f64) -> f64 {
    let p: Vec<f64> = pred.data.iter().map(|&v| v as f64).collect();
    let g: Vec<bool> = gt.data().iter().map(|&v| v == 1).collect();
    let y = g.iter().filter(|&&v| v).count() as f64 / g.len() as f64;
    if y == 0.0 {
        1.0 - matlab_mean(&p)
    } else if y == 1.0 {
        matlab_mean(&p)
    } else {
        let q = alpha * s_region(&p, &g, gt.width, gt.height) + (1.0 - alpha) * s_object(&p, &g);
        q.max(0.0)
    }
}

/// Enhanced-alignment measure over a binarized (or continuous) map,
/// averaged over all `w·h` pixels.
pub fn oracle_e_measure(fm: &[f64], gt: &BinaryMask) -> f64 {
    let g: Vec<f64> = gt.data().iter().map(|&v| v as f64).collect();
    let n = g.len() as f64;
    let enhanced: Vec<f64> = if g.iter().sum::<f64>() == 0.0 {
        fm.iter().map(|f| 1.0 - f).collect()
    } else if g.iter().all(|&v| v == 1.0) {
        fm.to_vec()
    } else {
        let mf = fm.iter().sum::<f64>() / n;
        let mg = g.iter().sum::<f64>() / n;
        fm.iter()
            .zip(&g)
            .map(|(f, gv)| {
                let (df, dg) = (f - mf, gv - mg);
                let align = 2.0 * dg * df / (dg * dg + df * df + f64::EPSILON);
                (align + 1.0).powi(2) / 4.0
            })
            .collect()
    };
    enhanced.iter().sum::<f64>() / n
}

pub fn binarized(pred: &ProbMap, t: f32) -> Vec<f64> {
    pred.data.iter().map(|&v| if v >= t { 1.0 } else { 0.0 }).collect()
}

// --- Losses, by explicit loops. ---

pub const CLAMP: f64 = 1e-7;

/// `|mean over the truncated window − center|`.
pub fn oracle_alpha(gt: &[f64], w: usize, h: usize, window: usize) -> Vec<f64> {
    let r = (window / 2) as isize;
    let mut out = vec![0.0; w * h];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let (mut s, mut n) = (0.0, 0.0);
            for di in -r..=r {
                for dj in -r..=r {
                    let (y, x) = (i + di, j + dj);
                    if y >= 0 && x >= 0 && y < h as isize && x < w as isize {
                        s += gt[y as usize * w + x as usize];
                        n += 1.0;
                    }
                }
            }
            out[i as usize * w + j as usize] = (s / n - gt[i as usize * w + j as usize]).abs();
        }
    }
    out
}

pub fn oracle_wbce(p: &[f64], gt: &[f64], alpha: &[f64], gamma: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..p.len() {
        let q = p[k].clamp(CLAMP, 1.0 - CLAMP);
        let bce = -(gt[k] * q.ln() + (1.0 - gt[k]) * (1.0 - q).ln());
        num += (1.0 + gamma * alpha[k]) * bce;
        den += gamma * alpha[k];
    }
    if den == 0.0 {
        den = p.len() as f64;
    }
    num / den
}

pub fn oracle_wiou(p: &[f64], gt: &[f64], alpha: &[f64], gamma: f64) -> f64 {
    let (mut inter, mut union) = (0.0, 0.0);
    for k in 0..p.len() {
        let q = p[k].clamp(CLAMP, 1.0 - CLAMP);
        let wk = 1.0 + gamma * alpha[k];
        inter += gt[k] * q * wk;
        union += (gt[k] + q - gt[k] * q) * wk;
    }
    1.0 - inter / union
}

pub fn oracle_logit_bce(x: &[f64], gt: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..x.len() {
        // ln σ(x) = −ln(1 + e^{−x}), ln(1 − σ(x)) = −ln(1 + e^{x}).
        let log_p = -(-x[k]).exp().ln_1p();
        let log_q = -x[k].exp().ln_1p();
        s += -(gt[k] * log_p + (1.0 - gt[k]) * log_q);
    }
    s / x.len() as f64
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}
