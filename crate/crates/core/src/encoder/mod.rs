//! Backbone plus receptive-field enhancement, producing the five-level
//! feature pyramid `X1..X5`.
//!
//! `X1` is the stem output (S/4), `X2..X5` are the four residual stages at
//! S/4, S/8, S/16 and S/32, each enhanced to a common channel count.

mod res2net;
mod rfb;
mod tiny;

use std::path::PathBuf;

use candle_core::{DType, Device, Tensor};
use candle_nn::VarBuilder;
use serde::{Deserialize, Serialize};

pub use res2net::Res2Net50;
pub use rfb::Rfb;
pub use tiny::TinyBackbone;

use crate::error::{Error, Result};

/// Parameter-name prefix of the backbone inside a model checkpoint.
pub const BACKBONE_PREFIX: &str = "encoder.backbone.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneVariant {
    /// Res2Net-50 v1b 26w×4s.
    #[serde(alias = "full")]
    FullBackbone,
    #[serde(alias = "tiny")]
    TinyBackbone,
}

impl BackboneVariant {
    pub fn raw_channels(self) -> [usize; 5] {
        match self {
            BackboneVariant::FullBackbone => Res2Net50::RAW_CHANNELS,
            BackboneVariant::TinyBackbone => TinyBackbone::RAW_CHANNELS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BackboneVariant::FullBackbone => "full-backbone",
            BackboneVariant::TinyBackbone => "tiny-backbone",
        }
    }
}

impl std::str::FromStr for BackboneVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full-backbone" | "full" | "res2net50" => Ok(Self::FullBackbone),
            "tiny-backbone" | "tiny" => Ok(Self::TinyBackbone),
            other => Err(format!("unknown backbone `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub variant: BackboneVariant,
    pub common_channels: usize,
    pub pretrained_weights_path: Option<PathBuf>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            variant: BackboneVariant::FullBackbone,
            common_channels: 32,
            pretrained_weights_path: None,
        }
    }
}

impl BackboneConfig {
    pub fn tiny() -> Self {
        Self {
            variant: BackboneVariant::TinyBackbone,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.common_channels < 8 {
            return Err(Error::config(
                "model.channels",
                format!("must be at least 8, got {}", self.common_channels),
            ));
        }
        Ok(())
    }

    /// Batch norm follows the backbone: the full backbone is built to load
    /// normalized ImageNet weights, the tiny one stays norm-free.
    pub fn batch_norm(&self) -> bool {
        self.variant == BackboneVariant::FullBackbone
    }
}

/// A preprocessed slice, `3 × height × width`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::InputShape(format!(
                "image tensor 3x{height}x{width} needs {} values, got {}",
                3 * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InputShape("image tensor contains non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// `(1, 3, H, W)` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.data, (1, 3, self.height, self.width), device)?.to_dtype(dtype)?)
    }

    /// Stack same-sized images into `(N, 3, H, W)`.
    pub fn stack(images: &[ImageTensor], dtype: DType, device: &Device) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::InputShape("empty image batch".into()))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for im in images {
            if im.height != first.height || im.width != first.width {
                return Err(Error::InputShape("images in a batch differ in size".into()));
            }
            data.extend_from_slice(&im.data);
        }
        Ok(Tensor::from_vec(data, (images.len(), 3, first.height, first.width), device)?
            .to_dtype(dtype)?)
    }
}

/// The five encoder levels.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub x1: Tensor,
    pub x2: Tensor,
    pub x3: Tensor,
    pub x4: Tensor,
    pub x5: Tensor,
}

impl FeaturePyramid {
    /// Level `1..=5`.
    pub fn level(&self, s: usize) -> Option<&Tensor> {
        match s {
            1 => Some(&self.x1),
            2 => Some(&self.x2),
            3 => Some(&self.x3),
            4 => Some(&self.x4),
            5 => Some(&self.x5),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
enum Backbone {
    Full(Res2Net50),
    Tiny(TinyBackbone),
}

#[derive(Debug, Clone)]
pub struct Encoder {
    backbone: Backbone,
    rfb: Vec<Rfb>,
    cfg: BackboneConfig,
}

impl Encoder {
    pub fn new(cfg: &BackboneConfig, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let bvb = vb.pp("backbone");
        let backbone = match cfg.variant {
            BackboneVariant::FullBackbone => Backbone::Full(Res2Net50::new(bvb)?),
            BackboneVariant::TinyBackbone => Backbone::Tiny(TinyBackbone::new(bvb)?),
        };
        let raw = cfg.variant.raw_channels();
        let rfb = (2..=5)
            .map(|s| {
                Rfb::new(
                    raw[s - 1],
                    cfg.common_channels,
                    cfg.batch_norm(),
                    vb.pp(format!("rfb{s}")),
                )
            })
            .collect::<candle_core::Result<_>>()?;
        Ok(Self {
            backbone,
            rfb,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    /// Raw backbone outputs: stem (`X1`) and stages 1..4 before enhancement.
    pub fn raw_features(&self, x: &Tensor, train: bool) -> Result<[Tensor; 5]> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 {
            return Err(Error::InputShape(format!("expected 3 channels, got {c}")));
        }
        if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
            return Err(Error::InputShape(format!(
                "spatial size {h}x{w} is not divisible by 32"
            )));
        }
        Ok(match &self.backbone {
            Backbone::Full(b) => b.forward_t(x, train)?,
            Backbone::Tiny(b) => b.forward(x)?,
        })
    }

    /// Enhance the raw output of backbone stage `level` (2..=5) to `C` channels.
    pub fn rfb_enhance(&self, level: usize, raw: &Tensor, train: bool) -> Result<Tensor> {
        let rfb = level
            .checked_sub(2)
            .and_then(|i| self.rfb.get(i))
            .ok_or_else(|| Error::Contract(format!("no receptive field block for level {level}")))?;
        let expected = self.cfg.variant.raw_channels()[level - 1];
        let c = raw.dim(1)?;
        if c != expected {
            return Err(Error::InputShape(format!(
                "level {level} expects {expected} raw channels, got {c}"
            )));
        }
        Ok(rfb.forward_t(raw, train)?)
    }

    pub fn extract_features(&self, x: &Tensor, train: bool) -> Result<FeaturePyramid> {
        let [x1, l1, l2, l3, l4] = self.raw_features(x, train)?;
        Ok(FeaturePyramid {
            x1,
            x2: self.rfb_enhance(2, &l1, train)?,
            x3: self.rfb_enhance(3, &l2, train)?,
            x4: self.rfb_enhance(4, &l3, train)?,
            x5: self.rfb_enhance(5, &l4, train)?,
        })
    }
}
