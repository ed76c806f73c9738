//! Reference implementations used as ground truth by equivalence tests and
//! `--verify` runs.
//!
//! Nothing here calls into the engine, the accumulator or the bit-plane code:
//! every loop, bit extraction and count is written out locally. Network
//! descriptions are read from [`Network`] but none of its execution paths run.

use crate::engine::{Activation, ConvLayerSpec, Network};
use crate::error::{Error, Result};
use crate::tensor::{IntTensor, RealTensor};

/// Direct nested-loop multiply-accumulate convolution.
///
/// `input` is `[C, H, W]`, `weights` is `[K, C, kh, kw]`; the result is
/// `[K, Ho, Wo]` with zero padding and the layer's stride.
pub fn conv_int_oracle(
    input: &IntTensor,
    weights: &IntTensor,
    layer: &ConvLayerSpec,
) -> Result<IntTensor> {
    let (ishape, wshape) = (input.shape(), weights.shape());
    if ishape.len() != 3 || wshape.len() != 4 {
        return Err(Error::Shape(format!(
            "oracle expects [C,H,W] input and [K,C,kh,kw] weights, got {ishape:?} and {wshape:?}"
        )));
    }
    let (c_in, h, w) = (ishape[0], ishape[1], ishape[2]);
    let (k_out, wc, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
    if wc != c_in {
        return Err(Error::Shape(format!(
            "weights expect {wc} channels, input has {c_in}"
        )));
    }
    let stride = layer.stride;
    let pad = layer.padding.amount();
    if h + 2 * pad < kh || w + 2 * pad < kw || stride == 0 {
        return Err(Error::Shape("kernel larger than padded input".into()));
    }
    let out_h = (h + 2 * pad - kh) / stride + 1;
    let out_w = (w + 2 * pad - kw) / stride + 1;

    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0u64; k_out * out_h * out_w];
    for k in 0..k_out {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc: u64 = 0;
                for c in 0..c_in {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let iy = (oy * stride + dy) as isize - pad as isize;
                            let ix = (ox * stride + dx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let xv = x[(c * h + iy as usize) * w + ix as usize];
                            let wv = wt[((k * c_in + c) * kh + dy) * kw + dx];
                            acc += xv * wv;
                        }
                    }
                }
                out[(k * out_h + oy) * out_w + ox] = acc;
            }
        }
    }
    IntTensor::new(vec![k_out, out_h, out_w], out)
}

/// Literal scalar evaluation of the bit-plane dot product
/// `sum_m sum_n 2^(m+n) * popcount(bit_n(W) AND bit_m(I))`.
pub fn eq1_scalar_oracle(input: &[u64], weights: &[u64], m_bits: u32, n_bits: u32) -> Result<u64> {
    if input.len() != weights.len() {
        return Err(Error::Shape(format!(
            "vectors of length {} and {}",
            input.len(),
            weights.len()
        )));
    }
    for (bits, values) in [(m_bits, input), (n_bits, weights)] {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| bits < 64 && v >> bits != 0)
        {
            return Err(Error::BitWidth { index, value, bits });
        }
    }
    let mut total: u64 = 0;
    for m in 0..m_bits {
        for n in 0..n_bits {
            let anded: Vec<u8> = input
                .iter()
                .zip(weights)
                .map(|(&i, &w)| (((i >> m) & 1) & ((w >> n) & 1)) as u8)
                .collect();
            total += (1u64 << (m + n)) * popcount_oracle(&anded);
        }
    }
    Ok(total)
}

/// Counts nonzero entries one at a time.
pub fn popcount_oracle(bits: &[u8]) -> u64 {
    let mut n = 0;
    for &b in bits {
        if b != 0 {
            n += 1;
        }
    }
    n
}

/// Plain dot product, the scalar form of [`conv_int_oracle`].
pub fn dot_oracle(a: &[u64], b: &[u64]) -> u64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Layer-by-layer reference inference. Returns every stage's output after
/// post-processing; the last entry holds the scores.
///
/// Quantized stages round inputs and weights to integer levels, convolve with
/// [`conv_int_oracle`] and rescale; full-precision stages use a direct real
/// convolution. Batch norm, activation and pooling are written out inline.
pub fn network_oracle(net: &Network, input: &RealTensor) -> Result<Vec<RealTensor>> {
    let mut x = input.clone();
    let mut outputs = Vec::new();
    for (stage, layer) in net.layers().iter().enumerate() {
        let spec = &layer.spec;
        let in_shape = net.shapes()[stage].input;
        let data = x.data().to_vec();
        let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        if data.len() != c * h * w {
            return Err(Error::Shape(format!("stage {stage} input has {} values", data.len())));
        }
        let (raw, oshape) = if spec.quantize {
            let level = |bits: u32| ((1u64 << bits) - 1) as f64;
            let to_int = |vals: &[f64], bits: u32| -> Result<Vec<u64>> {
                vals.iter()
                    .enumerate()
                    .map(|(index, &r)| {
                        if (0.0..=1.0).contains(&r) {
                            Ok((level(bits) * r).round() as u64)
                        } else {
                            Err(Error::Domain { index, value: r })
                        }
                    })
                    .collect()
            };
            let qi = IntTensor::new(vec![c, h, w], to_int(&data, spec.input_bits)?)?;
            let qw = IntTensor::new(
                layer.weights.shape().to_vec(),
                to_int(layer.weights.data(), spec.weight_bits)?,
            )?;
            let ints = conv_int_oracle(&qi, &qw, spec)?;
            let denom = (((1u64 << spec.input_bits) - 1) * ((1u64 << spec.weight_bits) - 1)) as f64;
            let shape = ints.shape().to_vec();
            (ints.data().iter().map(|&v| v as f64 / denom).collect::<Vec<f64>>(), shape)
        } else {
            real_conv_oracle(&data, [c, h, w], layer.weights.data(), spec)?
        };
        let mut y = raw;
        if let Some(bn) = &layer.bn {
            for v in &mut y {
                *v = (*v - bn.mean) / (bn.var + bn.eps).sqrt() * bn.gamma + bn.beta;
            }
        }
        if let Some(act) = layer.activation {
            for v in &mut y {
                *v = match act {
                    Activation::HalfTanh => (v.tanh() + 1.0) / 2.0,
                    Activation::Sign => {
                        if *v >= 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
            }
        }
        let mut shape = oshape;
        if let Some(pool) = layer.pool {
            let (k, s) = (pool.window, pool.stride);
            let (ch, ih, iw) = (shape[0], shape[1], shape[2]);
            let (oh, ow) = ((ih - k) / s + 1, (iw - k) / s + 1);
            let mut pooled = Vec::with_capacity(ch * oh * ow);
            for c in 0..ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut sum = 0.0;
                        for dy in 0..k {
                            for dx in 0..k {
                                sum += y[(c * ih + oy * s + dy) * iw + ox * s + dx];
                            }
                        }
                        pooled.push(sum / (k * k) as f64);
                    }
                }
            }
            y = pooled;
            shape = vec![ch, oh, ow];
        }
        x = RealTensor::new(shape, y)?;
        outputs.push(x.clone());
    }
    Ok(outputs)
}

fn real_conv_oracle(x: &[f64], shape: [usize; 3], wt: &[f64], l: &ConvLayerSpec) -> Result<(Vec<f64>, Vec<usize>)> {
    let [c_in, h, w] = shape;
    let pad = l.padding.amount();
    let out_h = (h + 2 * pad - l.kernel_h) / l.stride + 1;
    let out_w = (w + 2 * pad - l.kernel_w) / l.stride + 1;
    let mut out = Vec::with_capacity(l.out_channels * out_h * out_w);
    for k in 0..l.out_channels {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = 0.0;
                for c in 0..c_in {
                    for dy in 0..l.kernel_h {
                        for dx in 0..l.kernel_w {
                            let iy = (oy * l.stride + dy) as isize - pad as isize;
                            let ix = (ox * l.stride + dx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += x[(c * h + iy as usize) * w + ix as usize]
                                * wt[((k * c_in + c) * l.kernel_h + dy) * l.kernel_w + dx];
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    Ok((out, vec![l.out_channels, out_h, out_w]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Padding;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layer(kh: usize, kw: usize, c: usize, k: usize, stride: usize, pad: usize) -> ConvLayerSpec {
        ConvLayerSpec {
            kernel_h: kh,
            kernel_w: kw,
            in_channels: c,
            out_channels: k,
            stride,
            padding: if pad == 0 { Padding::None } else { Padding::Zero(pad) },
            weight_bits: 8,
            input_bits: 8,
            quantize: true,
        }
    }

    #[test]
    fn identity_kernel_returns_input() {
        let input = IntTensor::new(vec![1, 2, 3], vec![1, 2, 3, 4, 5, 6]).unwrap();
        let w = IntTensor::new(vec![1, 1, 1, 1], vec![1]).unwrap();
        let out = conv_int_oracle(&input, &w, &layer(1, 1, 1, 1, 1, 0)).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn two_element_dot() {
        // 3*1 + 1*2
        let input = IntTensor::new(vec![2, 1, 1], vec![3, 1]).unwrap();
        let w = IntTensor::new(vec![1, 2, 1, 1], vec![1, 2]).unwrap();
        let out = conv_int_oracle(&input, &w, &layer(1, 1, 2, 1, 1, 0)).unwrap();
        assert_eq!(out.data(), &[5]);
        assert_eq!(eq1_scalar_oracle(&[3, 1], &[1, 2], 2, 2).unwrap(), 5);
    }

    #[test]
    fn zero_weights_give_zero() {
        assert_eq!(eq1_scalar_oracle(&[7, 3, 255], &[0, 0, 0], 8, 4).unwrap(), 0);
    }

    #[test]
    fn eq1_rejects_overwide_values() {
        let err = eq1_scalar_oracle(&[4], &[1], 2, 1).unwrap_err();
        assert!(matches!(err, Error::BitWidth { index: 0, value: 4, bits: 2 }));
    }

    #[test]
    fn conv_is_linear_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let l = layer(3, 2, 2, 2, rng.random_range(1..3), rng.random_range(0..2));
            let input = IntTensor::new(
                vec![2, 5, 4],
                (0..40).map(|_| rng.random_range(0..16)).collect(),
            )
            .unwrap();
            let w1: Vec<u64> = (0..24).map(|_| rng.random_range(0..16)).collect();
            let w2: Vec<u64> = (0..24).map(|_| rng.random_range(0..16)).collect();
            let sum: Vec<u64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
            let t = |w: Vec<u64>| IntTensor::new(vec![2, 2, 3, 2], w).unwrap();
            let a = conv_int_oracle(&input, &t(w1), &l).unwrap();
            let b = conv_int_oracle(&input, &t(w2), &l).unwrap();
            let s = conv_int_oracle(&input, &t(sum), &l).unwrap();
            let ab: Vec<u64> = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
            assert_eq!(s.data(), &ab[..]);
        }
    }

    #[test]
    fn eq1_agrees_with_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..10_000 {
            let m = rng.random_range(1..=8u32);
            let n = rng.random_range(1..=8u32);
            let len = rng.random_range(1..=24);
            let i: Vec<u64> = (0..len).map(|_| rng.random_range(0..1u64 << m)).collect();
            let w: Vec<u64> = (0..len).map(|_| rng.random_range(0..1u64 << n)).collect();
            assert_eq!(
                eq1_scalar_oracle(&i, &w, m, n).unwrap(),
                dot_oracle(&i, &w),
                "trial {trial}: m={m} n={n}"
            );
        }
    }

    #[test]
    fn popcount_matches_byte_table() {
        // Table built by the recurrence pc(b) = pc(b >> 1) + (b & 1).
        let mut table = [0u64; 256];
        for b in 1..256 {
            table[b] = table[b >> 1] + (b as u64 & 1);
        }
        for (b, &expected) in table.iter().enumerate() {
            let bits: Vec<u8> = (0..8).map(|i| ((b >> i) & 1) as u8).collect();
            assert_eq!(popcount_oracle(&bits), expected);
        }
        assert_eq!(popcount_oracle(&[0]), 0);
        assert_eq!(popcount_oracle(&[1; 37]), 37);
    }
}
