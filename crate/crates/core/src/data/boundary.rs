//! Boundary ground truth from binary masks.
//!
//! Gradient-based extractors respond on both sides of a step edge; their
//! output is restricted to foreground pixels so the result stays one pixel
//! wide and lies on the inner side of the mask edge, like the `neighbor`
//! reference. The image border counts as background for every extractor.

use serde::{Deserialize, Serialize};

use crate::grid::{BinaryMask, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extractor {
    Canny,
    Sobel,
    Roberts,
    /// Foreground pixels with a 4-neighbor background pixel.
    Neighbor,
}

impl Extractor {
    pub const ALL: [Extractor; 4] = [Self::Canny, Self::Sobel, Self::Roberts, Self::Neighbor];

    pub fn name(self) -> &'static str {
        match self {
            Self::Canny => "canny",
            Self::Sobel => "sobel",
            Self::Roberts => "roberts",
            Self::Neighbor => "neighbor",
        }
    }
}

impl std::str::FromStr for Extractor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown boundary extractor `{s}` (canny, sobel, roberts, neighbor)"))
    }
}

impl std::fmt::Display for Extractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Canny parameters: Gaussian sigma and hysteresis thresholds as fractions
/// of the maximum gradient magnitude.
const CANNY_SIGMA: f64 = 1.0;
const CANNY_LOW: f64 = 0.1;
const CANNY_HIGH: f64 = 0.3;

pub fn extract_boundary_gt(mask: &BinaryMask, extractor: Extractor) -> BinaryMask {
    match extractor {
        Extractor::Neighbor => mask.inner_boundary(),
        Extractor::Sobel => {
            let (gx, gy) = sobel(&mask.to_f32().map(|v| v as f64));
            restrict(mask, |r, c| gx.get(r, c).hypot(gy.get(r, c)) > 1e-9)
        }
        Extractor::Roberts => {
            let mag = roberts(mask);
            restrict(mask, |r, c| mag.get(r, c) > 1e-9)
        }
        Extractor::Canny => canny(mask),
    }
}

fn restrict(mask: &BinaryMask, keep: impl Fn(usize, usize) -> bool) -> BinaryMask {
    BinaryMask::from_fn(mask.width, mask.height, |r, c| mask.get(r, c) && keep(r, c))
}

/// Value with zero padding outside the grid.
fn at(g: &Grid<f64>, r: isize, c: isize) -> f64 {
    if r < 0 || c < 0 || r as usize >= g.height || c as usize >= g.width {
        0.0
    } else {
        g.get(r as usize, c as usize)
    }
}

fn sobel(g: &Grid<f64>) -> (Grid<f64>, Grid<f64>) {
    let mut gx = Grid::filled(g.width, g.height, 0.0);
    let mut gy = gx.clone();
    for r in 0..g.height as isize {
        for c in 0..g.width as isize {
            let p = |dr: isize, dc: isize| at(g, r + dr, c + dc);
            let x = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let y = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            gx.set(r as usize, c as usize, x);
            gy.set(r as usize, c as usize, y);
        }
    }
    (gx, gy)
}

/// Roberts cross magnitude; each 2×2 window's response is credited to all
/// four of its pixels (maximum over windows), since the operator sits
/// between pixels.
fn roberts(mask: &BinaryMask) -> Grid<f64> {
    let g = mask.to_f32().map(|v| v as f64);
    let mut out = Grid::filled(g.width, g.height, 0.0);
    for r in -1..g.height as isize {
        for c in -1..g.width as isize {
            let d1 = at(&g, r, c) - at(&g, r + 1, c + 1);
            let d2 = at(&g, r, c + 1) - at(&g, r + 1, c);
            let m = d1.hypot(d2);
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let (rr, cc) = (r + dr, c + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < g.height && (cc as usize) < g.width {
                    let v = out.get(rr as usize, cc as usize);
                    out.set(rr as usize, cc as usize, f64::max(v, m));
                }
            }
        }
    }
    out
}

fn gaussian_blur(g: &Grid<f64>, sigma: f64) -> Grid<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let pass = |src: &Grid<f64>, horizontal: bool| {
        let mut out = Grid::filled(src.width, src.height, 0.0);
        for r in 0..src.height as isize {
            for c in 0..src.width as isize {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| {
                        let o = k as isize - radius;
                        let (rr, cc) = if horizontal { (r, c + o) } else { (r + o, c) };
                        w * at(src, rr, cc)
                    })
                    .sum();
                out.set(r as usize, c as usize, v);
            }
        }
        out
    };
    pass(&pass(g, true), false)
}

fn canny(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let blurred = gaussian_blur(&mask.to_f32().map(|v| v as f64), CANNY_SIGMA);
    let (gx, gy) = sobel(&blurred);
    let mag = Grid::new(
        w,
        h,
        gx.data.iter().zip(&gy.data).map(|(x, y)| x.hypot(*y)).collect(),
    )
    .expect("same shape");
    let max = mag.data.iter().copied().fold(0.0, f64::max);
    if max <= 1e-12 {
        return BinaryMask::zeros(w, h);
    }
    // Non-maximum suppression along the quantized gradient direction. Ties
    // are kept: a binary step has equal response on both of its sides and
    // the foreground restriction below picks the inner one.
    let mut thin = Grid::filled(w, h, 0.0);
    for r in 0..h {
        for c in 0..w {
            let m = mag.get(r, c);
            if m <= 0.0 {
                continue;
            }
            let angle = gy.get(r, c).atan2(gx.get(r, c)).to_degrees().rem_euclid(180.0);
            let (dr, dc): (isize, isize) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let (ri, ci) = (r as isize, c as isize);
            let a = at(&mag, ri + dr, ci + dc);
            let b = at(&mag, ri - dr, ci - dc);
            if m >= a - 1e-12 && m >= b - 1e-12 {
                thin.set(r, c, m);
            }
        }
    }
    let (low, high) = (CANNY_LOW * max, CANNY_HIGH * max);
    // Hysteresis: weak pixels survive when 8-connected to a strong one.
    let mut out = BinaryMask::zeros(w, h);
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if thin.get(r, c) >= high {
                out.set(r, c, true);
                stack.push((r, c));
            }
        }
    }
    while let Some((r, c)) = stack.pop() {
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w {
                    continue;
                }
                let (rr, cc) = (rr as usize, cc as usize);
                if !out.get(rr, cc) && thin.get(rr, cc) >= low {
                    out.set(rr, cc, true);
                    stack.push((rr, cc));
                }
            }
        }
    }
    restrict(mask, |r, c| out.get(r, c))
}
