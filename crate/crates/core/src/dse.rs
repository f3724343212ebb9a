//! Dual-branch semantic enhancement.
//!
//! Two attention maps at the `X3` scale: `A_t` from spatial attention over
//! the upsampled top level, `A_p` from progressive fusion of dilated
//! `X3..X5` features. `A_SE` is their mean.

use candle_core::Tensor;
use candle_nn::VarBuilder;

use crate::error::{Error, Result};
use crate::layers::{Activation, Conv, ConvSpec};
use crate::ops::{resize_like, upsample};

/// Dilation rates applied to `X3`, `X4` and `X5`.
pub const DILATION_RATES: [usize; 3] = [8, 4, 2];

#[derive(Debug, Clone)]
pub struct AttentionMaps {
    pub a_t: Tensor,
    pub a_p: Tensor,
    pub a_se: Tensor,
}

/// Dilated features at the native resolution of their sources.
#[derive(Debug, Clone)]
pub struct DilatedFeatureSet {
    pub fdc3: Tensor,
    pub fdc4: Tensor,
    pub fdc5: Tensor,
}

#[derive(Debug, Clone)]
pub struct Dse {
    spatial: Conv,
    dilated: [Conv; 3],
    fuse45: Conv,
    fuse345: Conv,
    out: Conv,
    activation: Activation,
}

impl Dse {
    pub fn new(channels: usize, activation: Activation, vb: VarBuilder) -> Result<Self> {
        let c = channels;
        let dilated = [
            Conv::new(c, c, ConvSpec::dilated(3, DILATION_RATES[0]), vb.pp("dilated3"))?,
            Conv::new(c, c, ConvSpec::dilated(3, DILATION_RATES[1]), vb.pp("dilated4"))?,
            Conv::new(c, c, ConvSpec::dilated(3, DILATION_RATES[2]), vb.pp("dilated5"))?,
        ];
        Ok(Self {
            spatial: Conv::new(2, 1, ConvSpec::square(3), vb.pp("spatial"))?,
            dilated,
            fuse45: Conv::new(2 * c, c, ConvSpec::square(3), vb.pp("fuse45"))?,
            fuse345: Conv::new(2 * c, c, ConvSpec::square(3), vb.pp("fuse345"))?,
            out: Conv::new(c, 1, ConvSpec::square(1), vb.pp("out"))?,
            activation,
        })
    }

    /// `A_t = σ(conv3×3([mean_c ‖ max_c](up4(X5))))`, at `X3` resolution.
    ///
    /// `target` fixes the output size; it is `X3` in the network.
    pub fn top_level_preservation(&self, x5: &Tensor, target: (usize, usize)) -> Result<Tensor> {
        let (_, _, h5, w5) = x5.dims4()?;
        if target != (4 * h5, 4 * w5) {
            return Err(Error::InputShape(format!(
                "X5 {h5}x{w5} does not upsample 4x to {}x{}",
                target.0, target.1
            )));
        }
        let up = upsample(x5, 4)?;
        let avg = up.mean_keepdim(1)?;
        let max = up.max_keepdim(1)?;
        let descriptor = Tensor::cat(&[avg, max], 1)?;
        Ok(candle_nn::ops::sigmoid(&self.spatial.forward(&descriptor)?)?)
    }

    pub fn dilated_features(&self, x3: &Tensor, x4: &Tensor, x5: &Tensor) -> Result<DilatedFeatureSet> {
        let act = |i: usize, x: &Tensor| -> Result<Tensor> {
            Ok(self.activation.apply(&self.dilated[i].forward(x)?)?)
        };
        Ok(DilatedFeatureSet {
            fdc3: act(0, x3)?,
            fdc4: act(1, x4)?,
            fdc5: act(2, x5)?,
        })
    }

    /// Returns `A_p` together with the intermediate `F_{4,5}`.
    pub fn progressive_integration(
        &self,
        x3: &Tensor,
        x4: &Tensor,
        x5: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        check_pyramid(x3, x4, x5)?;
        let d = self.dilated_features(x3, x4, x5)?;
        let f45 = self
            .fuse45
            .forward(&Tensor::cat(&[upsample(&d.fdc5, 2)?, d.fdc4], 1)?)?;
        let f345 = self
            .fuse345
            .forward(&Tensor::cat(&[upsample(&f45, 2)?, d.fdc3], 1)?)?;
        let a_p = candle_nn::ops::sigmoid(&self.out.forward(&f345)?)?;
        Ok((a_p, f45))
    }

    pub fn forward(&self, x3: &Tensor, x4: &Tensor, x5: &Tensor) -> Result<AttentionMaps> {
        let (_, _, h3, w3) = x3.dims4()?;
        let a_t = self.top_level_preservation(x5, (h3, w3))?;
        let (a_p, _) = self.progressive_integration(x3, x4, x5)?;
        let a_se = semantic_attention(&a_t, &a_p)?;
        Ok(AttentionMaps { a_t, a_p, a_se })
    }
}

fn check_pyramid(x3: &Tensor, x4: &Tensor, x5: &Tensor) -> Result<()> {
    let (_, _, h3, w3) = x3.dims4()?;
    let (_, _, h4, w4) = x4.dims4()?;
    let (_, _, h5, w5) = x5.dims4()?;
    if (h3, w3) != (2 * h4, 2 * w4) || (h4, w4) != (2 * h5, 2 * w5) {
        return Err(Error::InputShape(format!(
            "X3..X5 sizes {h3}x{w3}, {h4}x{w4}, {h5}x{w5} are not a 2x pyramid"
        )));
    }
    Ok(())
}

/// `A_SE = (A_t + A_p) / 2`.
pub fn semantic_attention(a_t: &Tensor, a_p: &Tensor) -> Result<Tensor> {
    if a_t.dims() != a_p.dims() {
        return Err(Error::InputShape(format!(
            "attention maps differ in shape: {:?} vs {:?}",
            a_t.dims(),
            a_p.dims()
        )));
    }
    Ok(((a_t + a_p)? * 0.5)?)
}

/// Broadcast a one-channel attention map over `features` after resizing it
/// to their resolution.
pub fn align_attention(a: &Tensor, features: &Tensor) -> Result<Tensor> {
    let a = resize_like(a, features)?;
    Ok(a.broadcast_as(features.shape())?.contiguous()?)
}
