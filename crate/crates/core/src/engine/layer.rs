use serde::{Deserialize, Serialize};

use crate::bitplane::MAX_BITS;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    None,
    /// Zero border of the given width on every side.
    Zero(usize),
}

impl Padding {
    pub fn amount(self) -> usize {
        match self {
            Padding::None => 0,
            Padding::Zero(p) => p,
        }
    }
}

/// One convolution layer. Fully connected layers are expressed as 1x1
/// convolutions over a flattened input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: Padding,
    /// Weight bit-width `n`.
    pub weight_bits: u32,
    /// Input bit-width `m`.
    pub input_bits: u32,
    /// When false the layer runs at full precision on the EPU.
    pub quantize: bool,
}

impl ConvLayerSpec {
    pub fn new(kernel: (usize, usize), in_channels: usize, out_channels: usize, bits: (u32, u32)) -> Self {
        Self {
            kernel_h: kernel.0,
            kernel_w: kernel.1,
            in_channels,
            out_channels,
            stride: 1,
            padding: Padding::None,
            weight_bits: bits.0,
            input_bits: bits.1,
            quantize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("kernel_h", self.kernel_h),
            ("kernel_w", self.kernel_w),
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("stride", self.stride),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be >= 1")));
            }
        }
        if self.quantize {
            for (name, b) in [("weight_bits", self.weight_bits), ("input_bits", self.input_bits)] {
                if !(1..=MAX_BITS).contains(&b) {
                    return Err(Error::Parameter(format!("{name} = {b} is outside 1..={MAX_BITS}")));
                }
            }
        }
        Ok(())
    }

    /// Length of one flattened receptive field, `kh * kw * cin`.
    pub fn vector_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels
    }

    pub fn weight_count(&self) -> usize {
        self.vector_len() * self.out_channels
    }

    /// Largest shift `(m - 1) + (n - 1)` applied by the shift register.
    pub fn max_shift(&self) -> u32 {
        self.weight_bits + self.input_bits - 2
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let pad = self.padding.amount();
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(Error::Shape(format!(
                "{}x{} kernel does not fit a {h}x{w} input with padding {pad}",
                self.kernel_h, self.kernel_w
            )));
        }
        Ok((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }

    /// Splits a receptive-field index into `(channel, dy, dx)`.
    #[inline]
    pub fn field_coord(&self, j: usize) -> (usize, usize, usize) {
        let per_c = self.kernel_h * self.kernel_w;
        (j / per_c, (j % per_c) / self.kernel_w, j % self.kernel_w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dims_with_padding_and_stride() {
        let mut l = ConvLayerSpec::new((3, 3), 1, 1, (1, 1));
        assert_eq!(l.output_dims(8, 8).unwrap(), (6, 6));
        l.padding = Padding::Zero(1);
        assert_eq!(l.output_dims(8, 8).unwrap(), (8, 8));
        l.stride = 2;
        assert_eq!(l.output_dims(8, 8).unwrap(), (4, 4));
        assert!(ConvLayerSpec::new((5, 5), 1, 1, (1, 1)).output_dims(4, 4).is_err());
    }

    #[test]
    fn validation() {
        assert!(ConvLayerSpec::new((1, 1), 1, 1, (1, 1)).validate().is_ok());
        assert!(ConvLayerSpec::new((0, 1), 1, 1, (1, 1)).validate().is_err());
        assert!(ConvLayerSpec::new((1, 1), 1, 1, (0, 1)).validate().is_err());
        let mut full = ConvLayerSpec::new((1, 1), 1, 1, (0, 0));
        full.quantize = false;
        assert!(full.validate().is_ok());
    }

    #[test]
    fn field_coord_roundtrip() {
        let l = ConvLayerSpec::new((3, 2), 4, 1, (1, 1));
        for j in 0..l.vector_len() {
            let (c, dy, dx) = l.field_coord(j);
            assert_eq!((c * 3 + dy) * 2 + dx, j);
        }
    }
}
