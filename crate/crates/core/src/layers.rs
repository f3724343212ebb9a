//! Small convolution building blocks on top of candle.

use candle_core::{ModuleT, Result, Tensor};
use candle_nn::{batch_norm, BatchNorm, BatchNormConfig, Init, VarBuilder};

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub padding: (usize, usize),
    pub stride: usize,
    pub dilation: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Square kernel, "same" padding for stride 1.
    pub fn square(k: usize) -> Self {
        Self {
            kernel: (k, k),
            padding: (k / 2, k / 2),
            stride: 1,
            dilation: 1,
            bias: true,
        }
    }

    pub fn dilated(k: usize, dilation: usize) -> Self {
        Self {
            padding: (dilation * (k / 2), dilation * (k / 2)),
            dilation,
            ..Self::square(k)
        }
    }

    pub fn rect(kh: usize, kw: usize) -> Self {
        Self {
            kernel: (kh, kw),
            padding: (kh / 2, kw / 2),
            ..Self::square(1)
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }
}

/// 2-D convolution with independent vertical/horizontal padding.
#[derive(Debug, Clone)]
pub struct Conv {
    weight: Tensor,
    bias: Option<Tensor>,
    spec: ConvSpec,
}

impl Conv {
    pub fn new(in_ch: usize, out_ch: usize, spec: ConvSpec, vb: VarBuilder) -> Result<Self> {
        let (kh, kw) = spec.kernel;
        let fan_in = (in_ch * kh * kw) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let init = Init::Uniform {
            lo: -bound,
            up: bound,
        };
        let weight = vb.get_with_hints((out_ch, in_ch, kh, kw), "weight", init)?;
        let bias = if spec.bias {
            Some(vb.get_with_hints(out_ch, "bias", init)?)
        } else {
            None
        };
        Ok(Self { weight, bias, spec })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (ph, pw) = self.spec.padding;
        let y = if ph == pw {
            x.conv2d(&self.weight, ph, self.spec.stride, self.spec.dilation, 1)?
        } else {
            let x = x.pad_with_zeros(2, ph, ph)?.pad_with_zeros(3, pw, pw)?;
            x.conv2d(&self.weight, 0, self.spec.stride, self.spec.dilation, 1)?
        };
        match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, (), 1, 1))?),
            None => Ok(y),
        }
    }
}

pub fn bn(channels: usize, vb: VarBuilder) -> Result<BatchNorm> {
    batch_norm(
        channels,
        BatchNormConfig {
            eps: 1e-5,
            remove_mean: true,
            affine: true,
            momentum: 0.1,
        },
        vb,
    )
}

/// Convolution followed by optional batch norm and ReLU.
#[derive(Debug, Clone)]
pub struct ConvNorm {
    conv: Conv,
    norm: Option<BatchNorm>,
    relu: bool,
}

impl ConvNorm {
    /// With `batch_norm` the convolution carries no bias and the norm lives
    /// under the `bn` key next to `conv`.
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        mut spec: ConvSpec,
        batch_norm: bool,
        relu: bool,
        vb: VarBuilder,
    ) -> Result<Self> {
        spec.bias = !batch_norm;
        let conv = Conv::new(in_ch, out_ch, spec, vb.pp("conv"))?;
        let norm = if batch_norm {
            Some(bn(out_ch, vb.pp("bn"))?)
        } else {
            None
        };
        Ok(Self { conv, norm, relu })
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut y = self.conv.forward(x)?;
        if let Some(n) = &self.norm {
            y = n.forward_t(&y, train)?;
        }
        if self.relu {
            y = y.relu()?;
        }
        Ok(y)
    }
}

/// Activation applied after the dilated convolutions of the semantic module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Sigmoid => candle_nn::ops::sigmoid(x),
            Activation::Relu => x.relu(),
        }
    }
}
