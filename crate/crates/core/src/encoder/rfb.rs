//! Receptive field block: four branches of growing receptive field
//! (1×1, then separable 1×k/k×1 and a dilated 3×3), concatenated, fused
//! by a 3×3 convolution and added to a 1×1 residual projection.

use candle_core::{Result, Tensor};
use candle_nn::VarBuilder;

use crate::layers::{ConvNorm, ConvSpec};

#[derive(Debug, Clone)]
pub struct Rfb {
    branches: Vec<Vec<ConvNorm>>,
    conv_cat: ConvNorm,
    conv_res: ConvNorm,
}

impl Rfb {
    pub fn new(in_ch: usize, out_ch: usize, batch_norm: bool, vb: VarBuilder) -> Result<Self> {
        let cn = |i: usize, spec: ConvSpec, vb: VarBuilder| {
            ConvNorm::new(i, out_ch, spec, batch_norm, false, vb)
        };
        let mut branches = vec![vec![cn(in_ch, ConvSpec::square(1), vb.pp("branch0.0"))?]];
        for (b, k) in [(1usize, 3usize), (2, 5), (3, 7)] {
            let bvb = vb.pp(format!("branch{b}"));
            branches.push(vec![
                cn(in_ch, ConvSpec::square(1), bvb.pp("0"))?,
                cn(out_ch, ConvSpec::rect(1, k), bvb.pp("1"))?,
                cn(out_ch, ConvSpec::rect(k, 1), bvb.pp("2"))?,
                cn(out_ch, ConvSpec::dilated(3, k), bvb.pp("3"))?,
            ]);
        }
        let conv_cat = cn(4 * out_ch, ConvSpec::square(3), vb.pp("conv_cat"))?;
        let conv_res = cn(in_ch, ConvSpec::square(1), vb.pp("conv_res"))?;
        Ok(Self {
            branches,
            conv_cat,
            conv_res,
        })
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut outs = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let mut h = x.clone();
            for layer in branch {
                h = layer.forward_t(&h, train)?;
            }
            outs.push(h);
        }
        let cat = self.conv_cat.forward_t(&Tensor::cat(&outs, 1)?, train)?;
        (cat + self.conv_res.forward_t(x, train)?)?.relu()
    }
}
