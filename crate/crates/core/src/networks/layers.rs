use candle_core::{Tensor, D};

use crate::error::Result;
use crate::networks::params::{Init, ParamStore};

/// 2-D convolution with square kernel, symmetric zero padding.
#[derive(Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            bias: true,
        }
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn num_params(&self) -> usize {
        let w = self.kernel * self.kernel * self.in_channels * self.out_channels;
        w + if self.bias { self.out_channels } else { 0 }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        (f(h), f(w))
    }

    /// Multiply-accumulates for one input of spatial size `h×w`: `k²·C_in·C_out·H_out·W_out`.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.output_size(h, w);
        (self.kernel * self.kernel * self.in_channels * self.out_channels) as u64 * (oh * ow) as u64
    }
}

impl Conv2d {
    /// Trainable conv with PyTorch's default uniform(±1/√fan_in) initialization.
    pub fn trainable(spec: ConvSpec, name: &str, store: &mut ParamStore, init: &mut Init) -> Result<Self> {
        let fan_in = (spec.in_channels * spec.kernel * spec.kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let weight = init.uniform(&[spec.out_channels, spec.in_channels, spec.kernel, spec.kernel], bound)?;
        let weight = store.insert(format!("{name}.weight"), weight)?;
        let bias = if spec.bias {
            let b = init.uniform(&[spec.out_channels], bound)?;
            Some(store.insert(format!("{name}.bias"), b)?)
        } else {
            None
        };
        Ok(Self::from_parts(spec, weight, bias))
    }

    pub fn from_parts(spec: ConvSpec, weight: Tensor, bias: Option<Tensor>) -> Self {
        Self {
            weight,
            bias,
            in_channels: spec.in_channels,
            out_channels: spec.out_channels,
            kernel: spec.kernel,
            stride: spec.stride,
            padding: spec.padding,
        }
    }

    pub fn spec(&self) -> ConvSpec {
        ConvSpec {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            bias: self.bias.is_some(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, self.out_channels, 1, 1))?)?),
            None => Ok(y),
        }
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&x.affine(slope, 0.0)?)?)
}

/// Numerically stable softmax along the last dimension, built from
/// differentiable primitives.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?;
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// `log Σ exp(x)` along the last dimension, keeping the reduced dim.
pub fn log_sum_exp_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let s = x.broadcast_sub(&max)?.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(s.broadcast_add(&max)?)
}

/// Row-wise L2 normalization with a tiny floor inside the square root.
pub fn l2_normalize_rows(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(D::Minus1)? + 1e-24)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}
