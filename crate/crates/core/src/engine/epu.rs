//! Element-wise processing unit: activation, batch normalization, pooling and
//! the full-precision convolution path used for unquantized layers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layer::ConvLayerSpec;
use crate::error::{Error, Result};
use crate::tensor::{IntTensor, RealTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `(tanh(x) + 1) / 2`
    HalfTanh,
    /// 1 for `x >= 0`, else 0.
    Sign,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::HalfTanh => (x.tanh() + 1.0) / 2.0,
            Activation::Sign => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half_tanh" => Ok(Activation::HalfTanh),
            "sign" => Ok(Activation::Sign),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::HalfTanh => "half_tanh",
            Activation::Sign => "sign",
        })
    }
}

pub fn epu_activation(x: &RealTensor, kind: Activation) -> Result<RealTensor> {
    if let Some(i) = x.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite activation input at index {i}")));
    }
    Ok(x.map(|&v| kind.apply(v)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchNorm {
    pub mean: f64,
    pub var: f64,
    pub gamma: f64,
    pub beta: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-5
}

impl BatchNorm {
    pub fn validate(&self) -> Result<()> {
        let d = self.var + self.eps;
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Numeric(format!("var + eps = {d} must be positive")));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / (self.var + self.eps).sqrt() * self.gamma + self.beta
    }
}

pub fn epu_batchnorm(x: &RealTensor, bn: &BatchNorm) -> Result<RealTensor> {
    bn.validate()?;
    Ok(x.map(|&v| bn.apply(v)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool {
    pub window: usize,
    pub stride: usize,
}

impl Pool {
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (k, s) = (self.window, self.stride);
        if k == 0 || s == 0 || h < k || w < k || !(h - k).is_multiple_of(s) || !(w - k).is_multiple_of(s) {
            return Err(Error::Shape(format!(
                "{k}x{k} pool with stride {s} does not tile a {h}x{w} map"
            )));
        }
        Ok(((h - k) / s + 1, (w - k) / s + 1))
    }
}

fn pool_with<T: Copy, U>(x: &crate::tensor::Tensor<T>, pool: Pool, reduce: impl Fn(&[T]) -> U) -> Result<crate::tensor::Tensor<U>> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(Error::Shape(format!("pooling expects [C,H,W], got {shape:?}")));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (oh, ow) = pool.output_dims(h, w)?;
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut window = Vec::with_capacity(pool.window * pool.window);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                window.clear();
                for dy in 0..pool.window {
                    for dx in 0..pool.window {
                        window.push(x.at3(ch, oy * pool.stride + dy, ox * pool.stride + dx));
                    }
                }
                out.push(reduce(&window));
            }
        }
    }
    crate::tensor::Tensor::new(vec![c, oh, ow], out)
}

/// Average pooling over real values.
pub fn epu_avgpool(x: &RealTensor, pool: Pool) -> Result<RealTensor> {
    pool_with(x, pool, |w| w.iter().sum::<f64>() / w.len() as f64)
}

/// Average pooling over integers; the mean rounds toward zero.
pub fn epu_avgpool_int(x: &IntTensor, pool: Pool) -> Result<IntTensor> {
    pool_with(x, pool, |w| w.iter().sum::<u64>() / w.len() as u64)
}

/// Full-precision convolution for unquantized layers. Sums run over
/// `(channel, dy, dx)` in row-major order.
pub fn conv_real(input: &RealTensor, weights: &RealTensor, layer: &ConvLayerSpec) -> Result<RealTensor> {
    let s = input.shape();
    if s.len() != 3 || s[0] != layer.in_channels {
        return Err(Error::Shape(format!(
            "input {s:?} does not match {} input channels",
            layer.in_channels
        )));
    }
    let expected_w = [layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w];
    if weights.shape() != expected_w {
        return Err(Error::Shape(format!(
            "weights have shape {:?}, layer expects {expected_w:?}",
            weights.shape()
        )));
    }
    let (h, w) = (s[1], s[2]);
    let (oh, ow) = layer.output_dims(h, w)?;
    let pad = layer.padding.amount() as isize;
    let l = layer.vector_len();
    let mut out = Vec::with_capacity(layer.out_channels * oh * ow);
    for k in 0..layer.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for j in 0..l {
                    let (c, dy, dx) = layer.field_coord(j);
                    let iy = (oy * layer.stride + dy) as isize - pad;
                    let ix = (ox * layer.stride + dx) as isize - pad;
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                        continue;
                    }
                    acc += input.at3(c, iy as usize, ix as usize) * weights.data()[k * l + j];
                }
                out.push(acc);
            }
        }
    }
    RealTensor::new(vec![layer.out_channels, oh, ow], out)
}
