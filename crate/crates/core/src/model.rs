//! The assembled network: encoder → semantic attention → boundary head →
//! MBG + decoder stages (5, 4, 3) → side heads.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use candle_nn::{VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

use crate::dse::{AttentionMaps, Dse};
use crate::encoder::{BackboneConfig, Encoder, FeaturePyramid};
use crate::error::{Error, Result};
use crate::layers::{Activation, Conv, ConvSpec};
use crate::mbg_decoder::{BoundaryFeatures, BoundaryHead, DecodeStage, Mbg, MbgBranches, Refinement};
use crate::ops::resize_bilinear;

/// Architecture and ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub dse_on: bool,
    pub mbg_on: bool,
    pub mbg_left_on: bool,
    pub mbg_right_on: bool,
    /// Pyramid level feeding the boundary head (2 by default).
    pub boundary_source_level: usize,
    /// Decoder stage whose prediction is the final output (3 by default;
    /// 2 or 1 append extra stages at shallower levels).
    pub output_stage: usize,
    pub refinement: Refinement,
    pub dilated_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            dse_on: true,
            mbg_on: true,
            mbg_left_on: true,
            mbg_right_on: true,
            boundary_source_level: 2,
            output_stage: 3,
            refinement: Refinement::Residual,
            dilated_activation: Activation::Sigmoid,
        }
    }
}

impl ModelConfig {
    pub fn tiny() -> Self {
        Self {
            backbone: BackboneConfig::tiny(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if !(1..=5).contains(&self.boundary_source_level) {
            return Err(Error::config(
                "model.boundary_source_level",
                format!("must be in 1..=5, got {}", self.boundary_source_level),
            ));
        }
        if !(1..=3).contains(&self.output_stage) {
            return Err(Error::config(
                "model.output_stage",
                format!("must be 1, 2 or 3, got {}", self.output_stage),
            ));
        }
        if self.mbg_on && !self.mbg_left_on && !self.mbg_right_on {
            return Err(Error::config(
                "model.mbg_left_on",
                "MBG needs at least one branch; set model.mbg_on = false instead",
            ));
        }
        Ok(())
    }

    pub fn branches(&self) -> MbgBranches {
        MbgBranches {
            left: self.mbg_left_on,
            right: self.mbg_right_on,
        }
    }

    /// Decoder levels in execution order.
    pub fn decoder_levels(&self) -> Vec<usize> {
        (self.output_stage..=5).rev().collect()
    }
}

/// Outputs at input resolution. Probability maps are post-sigmoid.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub s3: Tensor,
    pub s4: Tensor,
    pub s5: Tensor,
    /// Stage outputs beyond S3 when a shallower output stage is configured.
    pub extra: Vec<(usize, Tensor)>,
    pub a_se_full: Option<Tensor>,
    pub boundary_logits: Option<Tensor>,
    pub boundary_prob: Option<Tensor>,
    pub output_stage: usize,
}

impl PredictionSet {
    /// The designated final output.
    pub fn final_map(&self) -> &Tensor {
        match self.output_stage {
            3 => &self.s3,
            s => self
                .extra
                .iter()
                .find(|(l, _)| *l == s)
                .map(|(_, t)| t)
                .unwrap_or(&self.s3),
        }
    }

    /// Heads supervised by the weighted region losses, with their names.
    pub fn supervised_heads(&self) -> Vec<(String, &Tensor)> {
        let mut heads = vec![
            ("s3".to_string(), &self.s3),
            ("s4".to_string(), &self.s4),
            ("s5".to_string(), &self.s5),
        ];
        for (l, t) in &self.extra {
            heads.push((format!("s{l}"), t));
        }
        if let Some(a) = &self.a_se_full {
            heads.push(("a_se".to_string(), a));
        }
        heads
    }
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub pyramid: FeaturePyramid,
    pub attention: Option<AttentionMaps>,
    pub boundary: Option<BoundaryFeatures>,
    /// `F_B^s` per level.
    pub fused: BTreeMap<usize, Tensor>,
    /// `F_d^s` per level.
    pub decoded: BTreeMap<usize, Tensor>,
    pub predictions: PredictionSet,
}

pub struct BsNet {
    varmap: VarMap,
    cfg: ModelConfig,
    device: Device,
    dtype: DType,
    encoder: Encoder,
    dse: Dse,
    boundary_head: BoundaryHead,
    x1_proj: Option<Conv>,
    mbgs: BTreeMap<usize, Mbg>,
    stages: BTreeMap<usize, DecodeStage>,
    heads: BTreeMap<usize, Conv>,
}

impl std::fmt::Debug for BsNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BsNet")
            .field("cfg", &self.cfg)
            .field("dtype", &self.dtype)
            .field("parameters", &self.parameter_count())
            .finish()
    }
}

impl BsNet {
    /// Builds the network with deterministic initialization from `seed`.
    pub fn new(cfg: &ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, dtype, device);
        let c = cfg.backbone.common_channels;
        let raw = cfg.backbone.variant.raw_channels();

        let encoder = Encoder::new(&cfg.backbone, vb.pp("encoder"))?;
        let dse = Dse::new(c, cfg.dilated_activation, vb.pp("dse"))?;
        let source_channels = if cfg.boundary_source_level == 1 { raw[0] } else { c };
        let boundary_head = BoundaryHead::new(source_channels, c, vb.pp("boundary"))?;
        let x1_proj = if cfg.output_stage == 1 {
            Some(Conv::new(raw[0], c, ConvSpec::square(1), vb.pp("decoder.x1_proj"))?)
        } else {
            None
        };

        let fused_channels = if cfg.mbg_on { c * cfg.branches().count() } else { c };
        let mut mbgs = BTreeMap::new();
        let mut stages = BTreeMap::new();
        let mut heads = BTreeMap::new();
        for level in (1..=5).rev() {
            if level < cfg.output_stage {
                continue;
            }
            mbgs.insert(level, Mbg::new(level, c, c, vb.pp(format!("mbg{level}")))?);
            let prev_channels = if level == 5 { 1 } else { c };
            stages.insert(
                level,
                DecodeStage::new(
                    level,
                    fused_channels,
                    prev_channels,
                    c,
                    vb.pp(format!("decoder.stage{level}")),
                )?,
            );
            heads.insert(
                level,
                Conv::new(c, 1, ConvSpec::square(1), vb.pp(format!("heads.s{level}")))?,
            );
        }

        crate::checkpoint::initialize(&varmap, seed)?;
        Ok(Self {
            varmap,
            cfg: cfg.clone(),
            device: device.clone(),
            dtype,
            encoder,
            dse,
            boundary_head,
            x1_proj,
            mbgs,
            stages,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn dse(&self) -> &Dse {
        &self.dse
    }

    pub fn mbg(&self, level: usize) -> Option<&Mbg> {
        self.mbgs.get(&level)
    }

    pub fn parameter_count(&self) -> usize {
        self.varmap
            .data()
            .lock()
            .expect("varmap lock")
            .iter()
            .filter(|(n, _)| !n.ends_with("running_mean") && !n.ends_with("running_var"))
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    pub fn extract_features(&self, x: &Tensor, train: bool) -> Result<FeaturePyramid> {
        self.encoder.extract_features(&x.to_dtype(self.dtype)?, train)
    }

    /// Boundary head on the configured source level, resized to S/4.
    pub fn boundary(&self, pyramid: &FeaturePyramid) -> Result<BoundaryFeatures> {
        let (_, _, h2, w2) = pyramid.x2.dims4()?;
        let src = pyramid
            .level(self.cfg.boundary_source_level)
            .expect("validated level");
        self.boundary_head.forward(&resize_bilinear(src, h2, w2)?)
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<PredictionSet> {
        Ok(self.forward_traced(x, train)?.predictions)
    }

    pub fn forward_traced(&self, x: &Tensor, train: bool) -> Result<ForwardTrace> {
        let (_, _, h, w) = x.dims4()?;
        let pyramid = self.extract_features(x, train)?;
        self.forward_from_pyramid(pyramid, (h, w))
    }

    /// Everything after the encoder, for a given pyramid and input size.
    pub fn forward_from_pyramid(
        &self,
        pyramid: FeaturePyramid,
        input_size: (usize, usize),
    ) -> Result<ForwardTrace> {
        let (h, w) = input_size;
        let cfg = &self.cfg;

        let attention = if cfg.dse_on {
            Some(self.dse.forward(&pyramid.x3, &pyramid.x4, &pyramid.x5)?)
        } else {
            None
        };
        let a_se = attention.as_ref().map(|a| &a.a_se);
        let boundary = if cfg.mbg_on {
            Some(self.boundary(&pyramid)?)
        } else {
            None
        };

        let (n, _, h2, w2) = pyramid.x2.dims4()?;
        let (_, _, h3, w3) = pyramid.x3.dims4()?;
        // Without the semantic module the top stage starts from an empty map.
        let mut prev = match a_se {
            Some(a) => a.clone(),
            None => Tensor::zeros((n, 1, h3, w3), self.dtype, &self.device)?,
        };

        let mut fused = BTreeMap::new();
        let mut decoded = BTreeMap::new();
        for level in cfg.decoder_levels() {
            let x_s = match level {
                1 => self
                    .x1_proj
                    .as_ref()
                    .expect("x1 projection exists for output stage 1")
                    .forward(&pyramid.x1)?,
                l => pyramid.level(l).expect("level").clone(),
            };
            let f_b = match &boundary {
                Some(b) => self.mbgs[&level].fuse(&b.features, &x_s, cfg.branches())?,
                None => resize_bilinear(&x_s, h2, w2)?,
            };
            let f_d = self.stages[&level].forward(&f_b, &prev, a_se, cfg.refinement)?;
            fused.insert(level, f_b);
            decoded.insert(level, f_d.clone());
            prev = f_d;
        }

        let head = |level: usize| -> Result<Tensor> {
            let logits = self.heads[&level].forward(&decoded[&level])?;
            Ok(candle_nn::ops::sigmoid(&resize_bilinear(&logits, h, w)?)?)
        };
        let extra = decoded
            .keys()
            .filter(|&&l| l < 3)
            .rev()
            .map(|&l| Ok((l, head(l)?)))
            .collect::<Result<Vec<_>>>()?;
        let a_se_full = a_se
            .map(|a| resize_bilinear(a, h, w))
            .transpose()?;
        let boundary_logits = boundary
            .as_ref()
            .map(|b| resize_bilinear(&b.logits, h, w))
            .transpose()?;
        let boundary_prob = boundary_logits
            .as_ref()
            .map(candle_nn::ops::sigmoid)
            .transpose()?;
        let predictions = PredictionSet {
            s3: head(3)?,
            s4: head(4)?,
            s5: head(5)?,
            extra,
            a_se_full,
            boundary_logits,
            boundary_prob,
            output_stage: cfg.output_stage,
        };
        Ok(ForwardTrace {
            pyramid,
            attention,
            boundary,
            fused,
            decoded,
            predictions,
        })
    }
}
