//! Small residual backbone with the same stride schedule as Res2Net-50,
//! for fast tests and CPU experiments.

use candle_core::{Result, Tensor};
use candle_nn::VarBuilder;

use crate::layers::{ConvNorm, ConvSpec};
use crate::ops::{self, Pool};

pub const WIDTHS: [usize; 4] = [16, 32, 64, 128];
const STRIDES: [usize; 4] = [1, 2, 2, 2];

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: ConvNorm,
    conv2: ConvNorm,
    shortcut: Option<ConvNorm>,
}

impl ResBlock {
    fn new(in_ch: usize, out_ch: usize, stride: usize, vb: VarBuilder) -> Result<Self> {
        let conv1 = ConvNorm::new(
            in_ch,
            out_ch,
            ConvSpec::square(3).stride(stride),
            false,
            true,
            vb.pp("conv1"),
        )?;
        let conv2 = ConvNorm::new(out_ch, out_ch, ConvSpec::square(3), false, false, vb.pp("conv2"))?;
        let shortcut = if stride != 1 || in_ch != out_ch {
            Some(ConvNorm::new(
                in_ch,
                out_ch,
                ConvSpec::square(1).stride(stride),
                false,
                false,
                vb.pp("shortcut"),
            )?)
        } else {
            None
        };
        Ok(Self {
            conv1,
            conv2,
            shortcut,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv2.forward_t(&self.conv1.forward_t(x, false)?, false)?;
        let s = match &self.shortcut {
            Some(sc) => sc.forward_t(x, false)?,
            None => x.clone(),
        };
        (y + s)?.relu()
    }
}

#[derive(Debug, Clone)]
pub struct TinyBackbone {
    stem: ConvNorm,
    stages: Vec<ResBlock>,
}

impl TinyBackbone {
    pub const RAW_CHANNELS: [usize; 5] = [WIDTHS[0], WIDTHS[0], WIDTHS[1], WIDTHS[2], WIDTHS[3]];

    pub fn new(vb: VarBuilder) -> Result<Self> {
        let stem = ConvNorm::new(
            3,
            WIDTHS[0],
            ConvSpec::square(3).stride(2),
            false,
            true,
            vb.pp("stem"),
        )?;
        let mut stages = Vec::new();
        let mut in_ch = WIDTHS[0];
        for (i, (&w, &s)) in WIDTHS.iter().zip(STRIDES.iter()).enumerate() {
            stages.push(ResBlock::new(in_ch, w, s, vb.pp(format!("stage{}", i + 1)))?);
            in_ch = w;
        }
        Ok(Self { stem, stages })
    }

    pub fn forward(&self, x: &Tensor) -> Result<[Tensor; 5]> {
        let h = self.stem.forward_t(x, false)?;
        // Post-ReLU input, so zero padding is exact.
        let x1 = ops::pool2d(&h, 3, 2, 1, Pool::Max)?;
        let mut cur = x1.clone();
        let mut outs = Vec::with_capacity(4);
        for stage in &self.stages {
            cur = stage.forward(&cur)?;
            outs.push(cur.clone());
        }
        let [l1, l2, l3, l4]: [Tensor; 4] = outs.try_into().expect("four stages");
        Ok([x1, l1, l2, l3, l4])
    }
}
