//! Res2Net-50 v1b (26w×4s), laid out with the parameter names of the
//! public PyTorch release so converted ImageNet checkpoints load directly.

use candle_core::{ModuleT, Result, Tensor};
use candle_nn::{BatchNorm, VarBuilder};

use crate::layers::{bn, Conv, ConvSpec};
use crate::ops::{self, Pool};

const BASE_WIDTH: usize = 26;
const SCALE: usize = 4;
const EXPANSION: usize = 4;

fn conv(in_ch: usize, out_ch: usize, k: usize, stride: usize, vb: VarBuilder) -> Result<Conv> {
    Conv::new(in_ch, out_ch, ConvSpec::square(k).stride(stride).no_bias(), vb)
}

/// Average pool with zero padding counted in the denominator.
fn avg_pool_padded(x: &Tensor, k: usize, stride: usize, pad: usize) -> Result<Tensor> {
    ops::pool2d(x, k, stride, pad, Pool::Mean)
}

#[derive(Debug, Clone)]
struct Downsample {
    stride: usize,
    conv: Conv,
    bn: BatchNorm,
}

#[derive(Debug, Clone)]
struct Bottle2neck {
    width: usize,
    stage: bool,
    stride: usize,
    conv1: Conv,
    bn1: BatchNorm,
    convs: Vec<Conv>,
    bns: Vec<BatchNorm>,
    conv3: Conv,
    bn3: BatchNorm,
    downsample: Option<Downsample>,
}

impl Bottle2neck {
    fn new(
        inplanes: usize,
        planes: usize,
        stride: usize,
        stage: bool,
        vb: VarBuilder,
    ) -> Result<Self> {
        let width = planes * BASE_WIDTH / 64;
        let conv1 = conv(inplanes, width * SCALE, 1, 1, vb.pp("conv1"))?;
        let bn1 = bn(width * SCALE, vb.pp("bn1"))?;
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        for i in 0..SCALE - 1 {
            convs.push(conv(width, width, 3, stride, vb.pp(format!("convs.{i}")))?);
            bns.push(bn(width, vb.pp(format!("bns.{i}")))?);
        }
        let conv3 = conv(width * SCALE, planes * EXPANSION, 1, 1, vb.pp("conv3"))?;
        let bn3 = bn(planes * EXPANSION, vb.pp("bn3"))?;
        let downsample = if stride != 1 || inplanes != planes * EXPANSION {
            Some(Downsample {
                stride,
                conv: conv(inplanes, planes * EXPANSION, 1, 1, vb.pp("downsample.1"))?,
                bn: bn(planes * EXPANSION, vb.pp("downsample.2"))?,
            })
        } else {
            None
        };
        Ok(Self {
            width,
            stage,
            stride,
            conv1,
            bn1,
            convs,
            bns,
            conv3,
            bn3,
            downsample,
        })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let out = self.bn1.forward_t(&self.conv1.forward(x)?, train)?.relu()?;
        let splits: Vec<Tensor> = (0..SCALE)
            .map(|i| out.narrow(1, i * self.width, self.width))
            .collect::<Result<_>>()?;
        let mut parts = Vec::with_capacity(SCALE);
        let mut sp: Option<Tensor> = None;
        for i in 0..SCALE - 1 {
            let input = match (&sp, i == 0 || self.stage) {
                (Some(prev), false) => (prev + &splits[i])?,
                _ => splits[i].clone(),
            };
            let y = self.bns[i]
                .forward_t(&self.convs[i].forward(&input)?, train)?
                .relu()?;
            parts.push(y.clone());
            sp = Some(y);
        }
        let last = &splits[SCALE - 1];
        parts.push(if self.stage {
            avg_pool_padded(last, 3, self.stride, 1)?
        } else {
            last.clone()
        });
        let out = Tensor::cat(&parts, 1)?;
        let out = self.bn3.forward_t(&self.conv3.forward(&out)?, train)?;
        let residual = match &self.downsample {
            Some(d) => {
                let r = if d.stride > 1 {
                    x.avg_pool2d_with_stride(d.stride, d.stride)?
                } else {
                    x.clone()
                };
                d.bn.forward_t(&d.conv.forward(&r)?, train)?
            }
            None => x.clone(),
        };
        (out + residual)?.relu()
    }
}

#[derive(Debug, Clone)]
pub struct Res2Net50 {
    stem: [Conv; 3],
    stem_bn: [BatchNorm; 2],
    bn1: BatchNorm,
    layers: Vec<Vec<Bottle2neck>>,
}

impl Res2Net50 {
    pub const RAW_CHANNELS: [usize; 5] = [64, 256, 512, 1024, 2048];

    pub fn new(vb: VarBuilder) -> Result<Self> {
        let stem = [
            conv(3, 32, 3, 2, vb.pp("conv1.0"))?,
            conv(32, 32, 3, 1, vb.pp("conv1.3"))?,
            conv(32, 64, 3, 1, vb.pp("conv1.6"))?,
        ];
        let stem_bn = [bn(32, vb.pp("conv1.1"))?, bn(32, vb.pp("conv1.4"))?];
        let bn1 = bn(64, vb.pp("bn1"))?;
        let mut inplanes = 64;
        let mut layers = Vec::new();
        for (li, (&planes, &blocks)) in [64usize, 128, 256, 512]
            .iter()
            .zip([3usize, 4, 6, 3].iter())
            .enumerate()
        {
            let stride = if li == 0 { 1 } else { 2 };
            let lvb = vb.pp(format!("layer{}", li + 1));
            let mut layer = vec![Bottle2neck::new(inplanes, planes, stride, true, lvb.pp("0"))?];
            inplanes = planes * EXPANSION;
            for b in 1..blocks {
                layer.push(Bottle2neck::new(
                    inplanes,
                    planes,
                    1,
                    false,
                    lvb.pp(b.to_string()),
                )?);
            }
            layers.push(layer);
        }
        Ok(Self {
            stem,
            stem_bn,
            bn1,
            layers,
        })
    }

    /// Returns the stem output (after max-pool) and the four stage outputs.
    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<[Tensor; 5]> {
        let mut h = self.stem_bn[0]
            .forward_t(&self.stem[0].forward(x)?, train)?
            .relu()?;
        h = self.stem_bn[1]
            .forward_t(&self.stem[1].forward(&h)?, train)?
            .relu()?;
        h = self.bn1.forward_t(&self.stem[2].forward(&h)?, train)?.relu()?;
        // Zero padding is exact for max-pool here: inputs are post-ReLU.
        let x1 = ops::pool2d(&h, 3, 2, 1, Pool::Max)?;
        let mut outs = Vec::with_capacity(4);
        let mut cur = x1.clone();
        for layer in &self.layers {
            for block in layer {
                cur = block.forward_t(&cur, train)?;
            }
            outs.push(cur.clone());
        }
        let [l1, l2, l3, l4]: [Tensor; 4] = outs.try_into().expect("four stages");
        Ok([x1, l1, l2, l3, l4])
    }
}
