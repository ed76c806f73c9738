//! k-bit unsigned fixed-point tensors and their bit-plane decomposition.
//!
//! A tensor of k-bit values `v_i` is split into `k` bit vectors, plane `m`
//! holding bit `m` of every element, so that `v = sum_m 2^m * plane_m`.
//! Plane 0 is the least-significant plane.
//!
//! # PIMQ container
//!
//! Tensors are exchanged as a flat little-endian binary file:
//!
//! | offset      | size     | field                              |
//! |-------------|----------|------------------------------------|
//! | 0           | 4        | magic `b"PIMQ"`                    |
//! | 4           | 1        | version (`1`)                      |
//! | 5           | 1        | bit-width k (1..=32)               |
//! | 6           | 1        | rank r                             |
//! | 7           | 4·r      | dims, u32 LE each                  |
//! | 7 + 4·r     | 4·N      | values, u32 LE, row-major          |
//!
//! where N is the product of the dims. Trailing bytes are rejected.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::bits::BitVector;
use crate::error::{Error, Result};
use crate::tensor::RealTensor;

pub const MAX_BITS: u32 = 32;
pub const PIMQ_MAGIC: &[u8; 4] = b"PIMQ";
pub const PIMQ_VERSION: u8 = 1;

/// Largest storable level for `bits`, `2^bits - 1`.
pub fn max_level(bits: u32) -> u64 {
    (1u64 << bits) - 1
}

fn check_bits(bits: u32) -> Result<()> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::Parameter(format!(
            "bit-width {bits} outside 1..={MAX_BITS}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    shape: Vec<usize>,
    bits: u32,
    values: Vec<u32>,
}

impl QuantizedTensor {
    pub fn new(shape: Vec<usize>, bits: u32, values: Vec<u32>) -> Result<Self> {
        check_bits(bits)?;
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} elements but {} were given",
                values.len()
            )));
        }
        let max = max_level(bits);
        if let Some((index, &v)) = values.iter().enumerate().find(|(_, &v)| u64::from(v) > max) {
            return Err(Error::BitWidth {
                index,
                value: u64::from(v),
                bits,
            });
        }
        Ok(Self {
            shape,
            bits,
            values,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Real value represented by one stored level.
    pub fn scale(&self) -> f64 {
        1.0 / max_level(self.bits) as f64
    }

    pub fn reshaped(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.bits, self.values)
    }
}

/// `round((2^k - 1) * r)` for every element, rounding half away from zero.
pub fn quantize(real: &RealTensor, bits: u32) -> Result<QuantizedTensor> {
    check_bits(bits)?;
    let levels = max_level(bits) as f64;
    let mut values = Vec::with_capacity(real.len());
    for (index, &r) in real.data().iter().enumerate() {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Domain { index, value: r });
        }
        // f64::round rounds half away from zero
        values.push((levels * r).round() as u32);
    }
    Ok(QuantizedTensor {
        shape: real.shape().to_vec(),
        bits,
        values,
    })
}

pub fn dequantize(q: &QuantizedTensor) -> RealTensor {
    let levels = max_level(q.bits) as f64;
    RealTensor::new(
        q.shape.clone(),
        q.values.iter().map(|&v| f64::from(v) / levels).collect(),
    )
    .expect("shape already validated")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitPlaneSet {
    shape: Vec<usize>,
    bits: u32,
    planes: Vec<BitVector>,
}

impl BitPlaneSet {
    pub fn new(shape: Vec<usize>, bits: u32, planes: Vec<BitVector>) -> Result<Self> {
        check_bits(bits)?;
        if planes.len() != bits as usize {
            return Err(Error::Structural(format!(
                "{} planes supplied for bit-width {bits}",
                planes.len()
            )));
        }
        let n: usize = shape.iter().product();
        if let Some(p) = planes.iter().find(|p| p.len() != n) {
            return Err(Error::Structural(format!(
                "plane of length {} does not match {n} elements",
                p.len()
            )));
        }
        Ok(Self {
            shape,
            bits,
            planes,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Plane `m`, bit `m` of every element.
    pub fn plane(&self, m: usize) -> &BitVector {
        &self.planes[m]
    }

    pub fn planes(&self) -> &[BitVector] {
        &self.planes
    }
}

pub fn decompose(q: &QuantizedTensor) -> BitPlaneSet {
    let planes = (0..q.bits)
        .map(|m| BitVector::from_bools(q.values.iter().map(|&v| (v >> m) & 1 == 1)))
        .collect();
    BitPlaneSet {
        shape: q.shape.clone(),
        bits: q.bits,
        planes,
    }
}

pub fn recompose(b: &BitPlaneSet) -> Result<QuantizedTensor> {
    if b.planes.len() != b.bits as usize {
        return Err(Error::Structural(format!(
            "{} planes for bit-width {}",
            b.planes.len(),
            b.bits
        )));
    }
    let n: usize = b.shape.iter().product();
    let mut values = vec![0u32; n];
    for (m, plane) in b.planes.iter().enumerate() {
        if plane.len() != n {
            return Err(Error::Structural(format!(
                "plane {m} has {} elements, expected {n}",
                plane.len()
            )));
        }
        for (i, v) in values.iter_mut().enumerate() {
            if plane.get(i) {
                *v |= 1 << m;
            }
        }
    }
    QuantizedTensor::new(b.shape.clone(), b.bits, values)
}

pub fn write_pimq<W: Write>(mut w: W, q: &QuantizedTensor) -> Result<()> {
    if q.shape.len() > usize::from(u8::MAX) {
        return Err(Error::Format(format!("rank {} exceeds 255", q.shape.len())));
    }
    w.write_all(PIMQ_MAGIC)?;
    w.write_all(&[PIMQ_VERSION, q.bits as u8, q.shape.len() as u8])?;
    for &d in &q.shape {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(q.values.len() * 4);
    for &v in &q.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_pimq<R: Read>(mut r: R) -> Result<QuantizedTensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_pimq(&bytes)
}

pub fn decode_pimq(bytes: &[u8]) -> Result<QuantizedTensor> {
    let header = bytes
        .get(..7)
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    if &header[..4] != PIMQ_MAGIC {
        return Err(Error::Format("bad magic, expected PIMQ".into()));
    }
    if header[4] != PIMQ_VERSION {
        return Err(Error::Format(format!("unsupported version {}", header[4])));
    }
    let bits = u32::from(header[5]);
    let rank = usize::from(header[6]);
    let mut pos = 7;
    let read_u32 = |pos: &mut usize| -> Result<u32> {
        let b = bytes
            .get(*pos..*pos + 4)
            .ok_or_else(|| Error::Format("truncated body".into()))?;
        *pos += 4;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    };
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(&mut pos)? as usize);
    }
    let n: usize = shape.iter().product();
    if bytes.len() != pos + 4 * n {
        return Err(Error::Format(format!(
            "expected {} value bytes, found {}",
            4 * n,
            bytes.len().saturating_sub(pos)
        )));
    }
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(read_u32(&mut pos)?);
    }
    QuantizedTensor::new(shape, bits, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real(v: &[f64]) -> RealTensor {
        RealTensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    fn q(values: &[u32], bits: u32) -> QuantizedTensor {
        QuantizedTensor::new(vec![values.len()], bits, values.to_vec()).unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(&real(&[0.0]), 4).unwrap().values(), &[0]);
        assert_eq!(quantize(&real(&[1.0]), 3).unwrap().values(), &[7]);
        // 3 * 0.5 = 1.5 is exactly representable; the tie goes away from zero.
        assert_eq!(quantize(&real(&[0.5]), 2).unwrap().values(), &[2]);
    }

    #[test]
    fn quantize_rejects_out_of_range_with_index() {
        let err = quantize(&real(&[0.2, 1.5, 0.1]), 4).unwrap_err();
        assert!(matches!(err, Error::Domain { index: 1, .. }), "{err}");
        let err = quantize(&real(&[f64::NAN]), 4).unwrap_err();
        assert!(matches!(err, Error::Domain { index: 0, .. }));
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(dequantize(&q(&[0], 5)).data(), &[0.0]);
        assert_eq!(dequantize(&q(&[7], 3)).data(), &[1.0]);
        assert_eq!(dequantize(&q(&[2], 2)).data(), &[2.0 / 3.0]);
    }

    #[test]
    fn decompose_examples() {
        let b = decompose(&q(&[5], 3));
        let planes: Vec<_> = b.planes().iter().map(|p| p.get(0) as u8).collect();
        assert_eq!(planes, vec![1, 0, 1]);

        let b = decompose(&q(&[0, 0, 0, 0], 1));
        assert_eq!(b.plane(0), &BitVector::zeros(4));

        let b = decompose(&q(&[3, 1], 2));
        assert_eq!(b.plane(0), &BitVector::from_u8s(&[1, 1]));
        assert_eq!(b.plane(1), &BitVector::from_u8s(&[1, 0]));
    }

    #[test]
    fn recompose_examples() {
        let planes = vec![
            BitVector::from_u8s(&[1]),
            BitVector::from_u8s(&[0]),
            BitVector::from_u8s(&[1]),
        ];
        let b = BitPlaneSet::new(vec![1], 3, planes).unwrap();
        assert_eq!(recompose(&b).unwrap().values(), &[5]);

        let b = BitPlaneSet::new(vec![2, 2], 2, vec![BitVector::zeros(4); 2]).unwrap();
        assert_eq!(recompose(&b).unwrap().values(), &[0, 0, 0, 0]);
    }

    #[test]
    fn plane_count_mismatch_is_structural() {
        let err = BitPlaneSet::new(vec![1], 3, vec![BitVector::zeros(1)]).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }

    #[test]
    fn values_beyond_width_rejected() {
        let err = QuantizedTensor::new(vec![2], 2, vec![1, 4]).unwrap_err();
        assert!(matches!(err, Error::BitWidth { index: 1, value: 4, bits: 2 }));
    }

    #[test]
    fn pimq_layout_is_exact() {
        let t = QuantizedTensor::new(vec![2, 1], 3, vec![5, 7]).unwrap();
        let mut buf = Vec::new();
        write_pimq(&mut buf, &t).unwrap();
        assert_eq!(
            buf,
            [
                b'P', b'I', b'M', b'Q', 1, 3, 2, // magic, version, k, rank
                2, 0, 0, 0, 1, 0, 0, 0, // dims
                5, 0, 0, 0, 7, 0, 0, 0, // values
            ]
        );
        assert_eq!(read_pimq(&buf[..]).unwrap(), t);
    }

    #[test]
    fn pimq_rejects_corruption() {
        let t = QuantizedTensor::new(vec![2], 2, vec![1, 3]).unwrap();
        let mut buf = Vec::new();
        write_pimq(&mut buf, &t).unwrap();
        assert!(decode_pimq(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(decode_pimq(&bad).is_err());
        let mut too_wide = buf.clone();
        too_wide[11] = 9; // first value 9 > 3
        assert!(matches!(decode_pimq(&too_wide), Err(Error::BitWidth { .. })));
    }
}
