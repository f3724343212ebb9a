//! Deep-supervision objective: weighted BCE + weighted IoU on every
//! region head, plain BCE on the boundary map.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid};
use crate::model::PredictionSet;

/// Probability clamp applied before logarithms.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    /// Odd side of the window used for pixel importance.
    pub window: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 5.0,
            window: 31,
        }
    }
}

/// `α_ij = |mean(gt over window at (i,j)) − gt_ij|`, the window truncated
/// to the image (mean over valid pixels only).
pub fn pixel_importance(gt: &BinaryMask, window: usize) -> Result<Grid<f32>> {
    if window % 2 == 0 {
        return Err(Error::Contract(format!("importance window must be odd, got {window}")));
    }
    let (w, h) = (gt.width, gt.height);
    let r = window / 2;
    // Summed-area table with a zero row/column in front.
    let mut sat = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += gt.get(y, x) as u32;
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let s = sat[y1 * (w + 1) + x1] + sat[y0 * (w + 1) + x0]
                - sat[y0 * (w + 1) + x1]
                - sat[y1 * (w + 1) + x0];
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            let mean = s as f64 / n;
            data.push((mean - gt.get(y, x) as u8 as f64).abs() as f32);
        }
    }
    Grid::new(w, h, data)
}

/// Host-side binary masks from an `(N, 1, H, W)` tensor (values > 0.5).
pub fn masks_from_tensor(t: &Tensor) -> Result<Vec<BinaryMask>> {
    let (n, c, h, w) = t.dims4()?;
    if c != 1 {
        return Err(Error::InputShape(format!("expected one channel, got {c}")));
    }
    let v: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    Ok(v.chunks(h * w)
        .take(n)
        .map(|chunk| BinaryMask::from_fn(w, h, |r, col| chunk[r * w + col] > 0.5))
        .collect())
}

/// `(N, 1, H, W)` importance maps for a batch of ground-truth masks.
pub fn importance_tensor(gt: &Tensor, window: usize) -> Result<Tensor> {
    let (n, _, h, w) = gt.dims4()?;
    let mut data = Vec::with_capacity(n * h * w);
    for m in masks_from_tensor(gt)? {
        data.extend(pixel_importance(&m, window)?.data);
    }
    Ok(Tensor::from_vec(data, (n, 1, h, w), gt.device())?.to_dtype(gt.dtype())?)
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    let s = t.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
    if !s.is_finite() {
        return Err(Error::Contract(format!("{what} contains NaN or infinite values")));
    }
    Ok(())
}

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::InputShape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

fn per_image_sum(t: &Tensor) -> Result<Tensor> {
    Ok(t.flatten_from(1)?.sum(1)?)
}

/// Weighted BCE, batch mean of
/// `Σ (1+γα)·BCE / Σ γα` (plain mean BCE when `Σ γα = 0`).
pub fn weighted_bce(pred: &Tensor, gt: &Tensor, alpha: &Tensor, gamma: f64) -> Result<Tensor> {
    check_same(pred, gt, "weighted_bce")?;
    check_same(pred, alpha, "weighted_bce")?;
    check_finite(pred, "prediction")?;
    let p = pred.clamp(EPS, 1.0 - EPS)?;
    let bce = ((gt * p.log()?)? + ((1.0 - gt)? * (1.0 - &p)?.log()?)?)?.neg()?;
    let weights = ((alpha * gamma)? + 1.0)?;
    let num = per_image_sum(&(bce * weights)?)?;
    let (_, _, h, w) = pred.dims4()?;
    let den: Vec<f64> = per_image_sum(&(alpha * gamma)?)?
        .to_dtype(DType::F64)?
        .to_vec1::<f64>()?
        .into_iter()
        .map(|d| if d > 0.0 { d } else { (h * w) as f64 })
        .collect();
    let n = den.len();
    let den = Tensor::from_vec(den, n, pred.device())?.to_dtype(pred.dtype())?;
    Ok((num / den)?.mean(0)?)
}

/// Weighted IoU, batch mean of
/// `1 − Σ gt·p·(1+γα) / Σ (gt + p − gt·p)·(1+γα)`.
pub fn weighted_iou(pred: &Tensor, gt: &Tensor, alpha: &Tensor, gamma: f64) -> Result<Tensor> {
    check_same(pred, gt, "weighted_iou")?;
    check_same(pred, alpha, "weighted_iou")?;
    check_finite(pred, "prediction")?;
    let p = pred.clamp(EPS, 1.0 - EPS)?;
    let weights = ((alpha * gamma)? + 1.0)?;
    let inter_px = (gt * &p)?;
    let inter = per_image_sum(&(&inter_px * &weights)?)?;
    let union = per_image_sum(&(((gt + &p)? - inter_px)? * weights)?)?;
    Ok((1.0 - (inter / union)?)?.mean(0)?)
}

/// Mean binary cross-entropy on logits, computed stably.
pub fn boundary_bce(logits: &Tensor, gt: &Tensor) -> Result<Tensor> {
    check_same(logits, gt, "boundary_bce")?;
    check_finite(logits, "boundary logits")?;
    // max(x, 0) − x·y + ln(1 + e^{−|x|})
    let softplus = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    let l = ((logits.relu()? - (logits * gt)?)? + softplus)?;
    Ok(l.mean_all()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadLoss {
    pub head: String,
    pub wbce: f64,
    pub wiou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub heads: Vec<HeadLoss>,
    pub boundary_bce: f64,
}

impl LossBreakdown {
    /// `boundary_bce + Σ (wbce + wiou)`, recomputed from the terms in the
    /// order [`total_loss`] accumulates them, so f64 totals match exactly.
    pub fn sum_of_terms(&self) -> f64 {
        let mut acc = 0.0;
        for h in &self.heads {
            acc += h.wbce;
            acc += h.wiou;
        }
        acc + self.boundary_bce
    }
}

#[derive(Debug, Clone)]
pub struct Loss {
    /// Differentiable total.
    pub total: Tensor,
    pub breakdown: LossBreakdown,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Sum of all supervised terms; the boundary term is present only when the
/// prediction set carries boundary logits.
pub fn total_loss(
    preds: &PredictionSet,
    gt: &Tensor,
    boundary_gt: &Tensor,
    cfg: &LossConfig,
) -> Result<Loss> {
    let gt = gt.to_dtype(preds.s3.dtype())?;
    let alpha = importance_tensor(&gt, cfg.window)?;
    let mut heads = Vec::new();
    let mut total: Option<Tensor> = None;
    let mut add = |t: Tensor| -> Result<()> {
        total = Some(match total.take() {
            Some(acc) => (acc + t)?,
            None => t,
        });
        Ok(())
    };
    for (name, map) in preds.supervised_heads() {
        let wbce = weighted_bce(map, &gt, &alpha, cfg.gamma)?;
        let wiou = weighted_iou(map, &gt, &alpha, cfg.gamma)?;
        heads.push(HeadLoss {
            head: name,
            wbce: scalar(&wbce)?,
            wiou: scalar(&wiou)?,
        });
        add(wbce)?;
        add(wiou)?;
    }
    let mut boundary = 0.0;
    if let Some(logits) = &preds.boundary_logits {
        let b = boundary_bce(logits, &boundary_gt.to_dtype(logits.dtype())?)?;
        boundary = scalar(&b)?;
        add(b)?;
    }
    let total = total.expect("at least three heads");
    let breakdown = LossBreakdown {
        total: scalar(&total)?,
        heads,
        boundary_bce: boundary,
    };
    Ok(Loss { total, breakdown })
}
