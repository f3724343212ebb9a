use crate::error::Result;
use crate::grid::BinaryMask;

use super::{check_shapes, Measured};

/// 1-D squared distance transform (lower envelope of parabolas).
fn dt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let cross = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    for q in 1..n {
        let mut s = cross(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = cross(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest foreground
/// pixel of `mask`; `None` when `mask` is empty.
pub fn distance_transform_sq(mask: &BinaryMask) -> Option<Vec<f64>> {
    if mask.count() == 0 {
        return None;
    }
    let (w, h) = (mask.width, mask.height);
    // Larger than any squared distance inside the image, and exact in f64.
    let far = 4.0 * ((w + h) * (w + h)) as f64;
    let mut grid: Vec<f64> = mask.data().iter().map(|&v| if v != 0 { 0.0 } else { far }).collect();
    let mut col = vec![0f64; h];
    let mut out = vec![0f64; h.max(w)];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        dt_1d(&col, &mut out[..h]);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        let row: Vec<f64> = grid[y * w..(y + 1) * w].to_vec();
        dt_1d(&row, &mut out[..w]);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    Some(grid)
}

/// `max_{p ∈ from} min_{q ∈ to} ‖p − q‖`; `None` if either set is empty.
pub fn directed_hausdorff(from: &BinaryMask, to: &BinaryMask) -> Option<f64> {
    if from.count() == 0 {
        return None;
    }
    let dt = distance_transform_sq(to)?;
    from.data()
        .iter()
        .zip(dt.iter())
        .filter(|(&f, _)| f != 0)
        .map(|(_, &d)| d)
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))))
        .map(f64::sqrt)
}

/// Symmetric Hausdorff distance between the boundaries of two masks, in
/// pixels. Both boundaries empty gives 0; exactly one empty gives the
/// image diagonal. Both cases are flagged.
pub fn hausdorff(pred: &BinaryMask, gt: &BinaryMask) -> Result<Measured> {
    check_shapes((pred.width, pred.height), (gt.width, gt.height))?;
    let b = pred.inner_boundary();
    let g = gt.inner_boundary();
    Ok(match (b.count(), g.count()) {
        (0, 0) => Measured::fallback(0.0),
        (0, _) | (_, 0) => {
            let (w, h) = (pred.width as f64, pred.height as f64);
            Measured::fallback((w * w + h * h).sqrt())
        }
        _ => {
            let ab = directed_hausdorff(&b, &g).expect("non-empty");
            let ba = directed_hausdorff(&g, &b).expect("non-empty");
            Measured {
                value: ab.max(ba),
                degenerate: false,
            }
        }
    })
}
