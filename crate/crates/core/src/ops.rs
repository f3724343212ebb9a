//! Resampling shared by the network (as differentiable tensor ops) and the
//! data pipeline (on plain grids). Both paths use the same half-pixel
//! bilinear weights, i.e. non-aligned corners.

use candle_core::{DType, Device, Tensor};

use crate::grid::{BinaryMask, Grid};

/// For every output index: `(lo, hi, weight_of_hi)`.
pub fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = if lo + 1 < in_len { lo + 1 } else { lo };
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Dense `(out_len, in_len)` interpolation matrix.
pub fn bilinear_matrix(
    in_len: usize,
    out_len: usize,
    dtype: DType,
    device: &Device,
) -> candle_core::Result<Tensor> {
    let mut m = vec![0f64; out_len * in_len];
    for (o, (lo, hi, w)) in bilinear_taps(in_len, out_len).into_iter().enumerate() {
        m[o * in_len + lo] += 1.0 - w;
        m[o * in_len + hi] += w;
    }
    Tensor::from_vec(m, (out_len, in_len), device)?.to_dtype(dtype)
}

/// Bilinear resize of an `(N, C, H, W)` tensor, differentiable.
///
/// Implemented as `Ry · x · Rxᵀ` so that gradients flow through matmuls.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> candle_core::Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h == out_h && w == out_w {
        return Ok(x.clone());
    }
    let ry = bilinear_matrix(h, out_h, x.dtype(), x.device())?;
    let rx_t = bilinear_matrix(w, out_w, x.dtype(), x.device())?.t()?.contiguous()?;
    let cols = x.contiguous()?.broadcast_matmul(&rx_t)?;
    ry.broadcast_matmul(&cols)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    Max,
    /// Mean over the full window, padding included.
    Mean,
}

/// `k×k` pooling of an `(N, C, H, W)` tensor with zero padding `pad`.
///
/// Built from shifted `index_select` views so it has a backward pass for
/// any kernel and stride (candle only differentiates `k == stride`).
/// Zero padding is only correct for max-pool on non-negative inputs.
pub fn pool2d(x: &Tensor, k: usize, stride: usize, pad: usize, kind: Pool) -> candle_core::Result<Tensor> {
    let x = if pad > 0 {
        x.pad_with_zeros(2, pad, pad)?.pad_with_zeros(3, pad, pad)?
    } else {
        x.clone()
    };
    let (_, _, h, w) = x.dims4()?;
    if h < k || w < k {
        candle_core::bail!("pool2d: input {h}x{w} smaller than kernel {k}");
    }
    let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let index = |offset: usize, n: usize| {
        let idx: Vec<u32> = (0..n).map(|i| (offset + i * stride) as u32).collect();
        Tensor::new(idx, x.device())
    };
    let mut acc: Option<Tensor> = None;
    for di in 0..k {
        let rows = x.index_select(&index(di, oh)?, 2)?;
        for dj in 0..k {
            let v = rows.index_select(&index(dj, ow)?, 3)?;
            acc = Some(match (acc, kind) {
                (None, _) => v,
                (Some(a), Pool::Max) => a.maximum(&v)?,
                (Some(a), Pool::Mean) => (a + v)?,
            });
        }
    }
    let acc = acc.expect("k >= 1");
    match kind {
        Pool::Max => Ok(acc),
        Pool::Mean => acc / (k * k) as f64,
    }
}

/// Integer-factor upsampling, `up_n` in the network description.
pub fn upsample(x: &Tensor, factor: usize) -> candle_core::Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    resize_bilinear(x, h * factor, w * factor)
}

/// Resize `x` to the spatial size of `like`.
pub fn resize_like(x: &Tensor, like: &Tensor) -> candle_core::Result<Tensor> {
    let (_, _, h, w) = like.dims4()?;
    resize_bilinear(x, h, w)
}

pub fn resize_grid(src: &Grid<f32>, out_w: usize, out_h: usize) -> Grid<f32> {
    if src.width == out_w && src.height == out_h {
        return src.clone();
    }
    let ty = bilinear_taps(src.height, out_h);
    let tx = bilinear_taps(src.width, out_w);
    let mut data = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, wy) in &ty {
        for &(x0, x1, wx) in &tx {
            let top = src.get(y0, x0) as f64 * (1.0 - wx) + src.get(y0, x1) as f64 * wx;
            let bot = src.get(y1, x0) as f64 * (1.0 - wx) + src.get(y1, x1) as f64 * wx;
            data.push((top * (1.0 - wy) + bot * wy) as f32);
        }
    }
    Grid {
        width: out_w,
        height: out_h,
        data,
    }
}

/// Bilinear resize followed by re-binarization at 0.5.
pub fn resize_mask(mask: &BinaryMask, out_w: usize, out_h: usize) -> BinaryMask {
    if mask.width == out_w && mask.height == out_h {
        return mask.clone();
    }
    let r = resize_grid(&mask.to_f32(), out_w, out_h);
    BinaryMask::binarize(&r, 0.5)
}

/// Nearest-neighbor resize, used for one-pixel boundary maps.
pub fn resize_mask_nearest(mask: &BinaryMask, out_w: usize, out_h: usize) -> BinaryMask {
    let sy = mask.height as f64 / out_h as f64;
    let sx = mask.width as f64 / out_w as f64;
    BinaryMask::from_fn(out_w, out_h, |r, c| {
        let rr = (((r as f64 + 0.5) * sy).floor() as usize).min(mask.height - 1);
        let cc = (((c as f64 + 0.5) * sx).floor() as usize).min(mask.width - 1);
        mask.get(rr, cc)
    })
}
