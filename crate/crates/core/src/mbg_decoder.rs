//! Boundary head, mirror-symmetric boundary guidance (MBG) and the
//! decoder stages.
//!
//! Every fused and decoded feature lives at the `X2` resolution (S/4).

use candle_core::Tensor;
use candle_nn::VarBuilder;
use serde::{Deserialize, Serialize};

use crate::dse::align_attention;
use crate::error::{Error, Result};
use crate::layers::{Conv, ConvSpec};
use crate::ops::resize_bilinear;

#[derive(Debug, Clone)]
pub struct BoundaryFeatures {
    /// `F_b`, the feature shared by every MBG instance.
    pub features: Tensor,
    /// One-channel boundary logits at S/4.
    pub logits: Tensor,
}

/// Three 3×3 conv + ReLU layers, then a 1×1 projection to one channel.
#[derive(Debug, Clone)]
pub struct BoundaryHead {
    convs: [Conv; 3],
    out: Conv,
}

impl BoundaryHead {
    pub fn new(in_ch: usize, width: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            convs: [
                Conv::new(in_ch, width, ConvSpec::square(3), vb.pp("conv1"))?,
                Conv::new(width, width, ConvSpec::square(3), vb.pp("conv2"))?,
                Conv::new(width, width, ConvSpec::square(3), vb.pp("conv3"))?,
            ],
            out: Conv::new(width, 1, ConvSpec::square(1), vb.pp("out"))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<BoundaryFeatures> {
        let mut h = x.clone();
        for c in &self.convs {
            h = c.forward(&h)?.relu()?;
        }
        let logits = self.out.forward(&h)?;
        Ok(BoundaryFeatures {
            features: h,
            logits,
        })
    }
}

/// Which mirror branches of an MBG block are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MbgBranches {
    /// `F_bf`: upsampled encoder features masked by boundary features.
    pub left: bool,
    /// `F_fb`: boundary features masked by `W^s` from the encoder.
    pub right: bool,
}

impl MbgBranches {
    pub const BOTH: MbgBranches = MbgBranches {
        left: true,
        right: true,
    };

    pub fn count(self) -> usize {
        self.left as usize + self.right as usize
    }
}

#[derive(Debug, Clone)]
pub struct Mbg {
    level: usize,
    fb_proj: Conv,
    mask_conv: Conv,
    bf_proj: Conv,
    bf_conv: Conv,
}

impl Mbg {
    pub fn new(level: usize, channels: usize, boundary_width: usize, vb: VarBuilder) -> Result<Self> {
        if !(1..=5).contains(&level) {
            return Err(Error::Contract(format!("MBG level must be in 1..=5, got {level}")));
        }
        let c = channels;
        Ok(Self {
            level,
            fb_proj: Conv::new(boundary_width, c, ConvSpec::square(1), vb.pp("fb_proj"))?,
            mask_conv: Conv::new(c, c, ConvSpec::square(3), vb.pp("mask_conv"))?,
            bf_proj: Conv::new(boundary_width, c, ConvSpec::square(1), vb.pp("bf_proj"))?,
            bf_conv: Conv::new(c, c, ConvSpec::square(3), vb.pp("bf_conv"))?,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Parameters of the right (`F_fb`) branch.
    pub fn right_branch_weights(&self) -> [&Tensor; 2] {
        [self.fb_proj.weight(), self.mask_conv.weight()]
    }

    /// Parameters of the left (`F_bf`) branch.
    pub fn left_branch_weights(&self) -> [&Tensor; 2] {
        [self.bf_proj.weight(), self.bf_conv.weight()]
    }

    /// `F_B^s = [F_fb^s ‖ F_bf^s]` with
    /// `F_fb = ReLU(up_n(conv3×3(X_s)) ⊙ conv1×1(F_b))` and
    /// `F_bf = up_n(X_s) ⊙ conv3×3(conv1×1(F_b))`.
    pub fn fuse(&self, f_b: &Tensor, x_s: &Tensor, branches: MbgBranches) -> Result<Tensor> {
        let (_, _, hb, wb) = f_b.dims4()?;
        let (_, _, hs, ws) = x_s.dims4()?;
        if self.level >= 2 {
            let n = 1usize << (self.level - 2);
            if (hs * n, ws * n) != (hb, wb) {
                return Err(Error::InputShape(format!(
                    "level {} feature {hs}x{ws} does not upsample {n}x to {hb}x{wb}",
                    self.level
                )));
            }
        }
        if branches.count() == 0 {
            return Err(Error::Contract("MBG needs at least one branch".into()));
        }
        let up = |t: &Tensor| resize_bilinear(t, hb, wb);
        let mut parts = Vec::with_capacity(2);
        if branches.right {
            let w = up(&self.mask_conv.forward(x_s)?)?;
            parts.push((w * self.fb_proj.forward(f_b)?)?.relu()?);
        }
        if branches.left {
            let mask = self.bf_conv.forward(&self.bf_proj.forward(f_b)?)?;
            parts.push((up(x_s)? * mask)?);
        }
        Ok(Tensor::cat(&parts, 1)?)
    }
}

/// How `A_SE` refines each decoded stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Refinement {
    /// `F ⊙ (1 + A)`.
    Residual,
    /// `F ⊙ A`.
    Bare,
}

impl std::str::FromStr for Refinement {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "residual" => Ok(Self::Residual),
            "bare" => Ok(Self::Bare),
            other => Err(format!("unknown refinement `{other}`")),
        }
    }
}

pub fn refine(features: &Tensor, a_se: &Tensor, mode: Refinement) -> Result<Tensor> {
    let a = align_attention(a_se, features)?;
    Ok(match mode {
        Refinement::Residual => (features * (a + 1.0)?)?,
        Refinement::Bare => (features * a)?,
    })
}

/// `F_d^s = align(F_d^{s+1}) ⊕ conv3×3([F_B^s ‖ conv3×3(align(F_d^{s+1}))])`.
#[derive(Debug, Clone)]
pub struct DecodeStage {
    level: usize,
    prev_conv: Conv,
    fuse: Conv,
    skip: Option<Conv>,
    channels: usize,
}

impl DecodeStage {
    pub fn new(
        level: usize,
        fused_channels: usize,
        prev_channels: usize,
        channels: usize,
        vb: VarBuilder,
    ) -> Result<Self> {
        let skip = if prev_channels != channels {
            Some(Conv::new(prev_channels, channels, ConvSpec::square(1), vb.pp("skip"))?)
        } else {
            None
        };
        Ok(Self {
            level,
            prev_conv: Conv::new(prev_channels, channels, ConvSpec::square(3), vb.pp("prev_conv"))?,
            fuse: Conv::new(fused_channels + channels, channels, ConvSpec::square(3), vb.pp("fuse"))?,
            skip,
            channels,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn forward(
        &self,
        fused: &Tensor,
        prev: &Tensor,
        a_se: Option<&Tensor>,
        refinement: Refinement,
    ) -> Result<Tensor> {
        let (_, _, h, w) = fused.dims4()?;
        let aligned = resize_bilinear(prev, h, w)?;
        let skip = match &self.skip {
            Some(proj) => proj.forward(&aligned)?,
            None => aligned.clone(),
        };
        if skip.dim(1)? != self.channels {
            return Err(Error::Contract(format!(
                "decoder stage {} skip has {} channels, fused path has {}",
                self.level,
                skip.dim(1)?,
                self.channels
            )));
        }
        let inner = self.prev_conv.forward(&aligned)?;
        let mut out = (skip + self.fuse.forward(&Tensor::cat(&[fused, &inner], 1)?)?)?;
        if let Some(a) = a_se {
            out = refine(&out, a, refinement)?;
        }
        Ok(out)
    }
}
