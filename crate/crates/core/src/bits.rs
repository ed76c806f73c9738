//! Packed bit vectors, 64 elements per word, LSB of word 0 is element 0.
//!
//! Bits past `len` in the last word are padding and always stay zero.

use std::fmt;

const WORD_BITS: usize = 64;

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

fn words_for(len: usize) -> usize {
    len.div_ceil(WORD_BITS)
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut v = Self {
            len,
            words: vec![u64::MAX; words_for(len)],
        };
        v.clear_padding();
        v
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for b in bits {
            if len % WORD_BITS == 0 {
                words.push(0);
            }
            if b {
                words[len / WORD_BITS] |= 1 << (len % WORD_BITS);
            }
            len += 1;
        }
        Self { len, words }
    }

    /// Builds a vector from 0/1 values; any nonzero entry is a set bit.
    pub fn from_u8s(bits: &[u8]) -> Self {
        Self::from_bools(bits.iter().map(|&b| b != 0))
    }

    /// The low `width` bits of `value`, element 0 = bit 0.
    pub fn from_uint(value: u64, width: usize) -> Self {
        assert!(width <= WORD_BITS, "width {width} exceeds one word");
        let mut v = Self::zeros(width);
        if width > 0 {
            let mask = if width == WORD_BITS {
                u64::MAX
            } else {
                (1u64 << width) - 1
            };
            v.words[0] = value & mask;
        }
        v
    }

    /// Parses an MSB-first string such as `"1001"`.
    pub fn from_msb_str(s: &str) -> Option<Self> {
        let mut bits = Vec::with_capacity(s.len());
        for c in s.chars().rev() {
            match c {
                '0' => bits.push(false),
                '1' => bits.push(true),
                _ => return None,
            }
        }
        Some(Self::from_bools(bits))
    }

    pub fn to_msb_string(&self) -> String {
        (0..self.len)
            .rev()
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect()
    }

    /// Interprets the vector as an unsigned integer, element 0 = LSB.
    pub fn to_uint(&self) -> u64 {
        assert!(self.len <= WORD_BITS, "vector of {} bits exceeds one word", self.len);
        self.words.first().copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        let mask = 1u64 << (i % WORD_BITS);
        if value {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Copy of `self` truncated or zero-extended to `len` elements.
    pub fn resized(&self, len: usize) -> Self {
        let mut out = Self::zeros(len);
        let n = out.words.len().min(self.words.len());
        out.words[..n].copy_from_slice(&self.words[..n]);
        out.clear_padding();
        out
    }

    /// Elements `[start, start + len)` as a new vector.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.len, "slice out of range");
        if start.is_multiple_of(WORD_BITS) {
            let first = start / WORD_BITS;
            let n = words_for(len);
            let mut out = Self {
                len,
                words: self.words[first..first + n].to_vec(),
            };
            out.clear_padding();
            return out;
        }
        Self::from_bools((start..start + len).map(|i| self.get(i)))
    }

    pub fn and(&self, other: &Self) -> Self {
        self.zip_words(other, |a, b| a & b)
    }

    pub fn or(&self, other: &Self) -> Self {
        self.zip_words(other, |a, b| a | b)
    }

    pub fn nor(&self, other: &Self) -> Self {
        self.zip_words(other, |a, b| !(a | b))
    }

    fn zip_words(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Self {
        assert_eq!(self.len, other.len, "bit vector length mismatch");
        let mut out = Self {
            len: self.len,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        };
        out.clear_padding();
        out
    }

    /// True when every padding bit of the last word is zero.
    pub fn padding_is_clear(&self) -> bool {
        match (self.len % WORD_BITS, self.words.last()) {
            (0, _) | (_, None) => true,
            (r, Some(&w)) => w >> r == 0,
        }
    }

    fn clear_padding(&mut self) {
        let r = self.len % WORD_BITS;
        if r != 0 {
            if let Some(w) = self.words.last_mut() {
                *w &= (1u64 << r) - 1;
            }
        }
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector[")?;
        for b in self.iter() {
            write!(f, "{}", b as u8)?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_string_round_trip() {
        let v = BitVector::from_msb_str("010010").unwrap();
        assert_eq!(v.to_uint(), 18);
        assert_eq!(v.to_msb_string(), "010010");
        assert!(BitVector::from_msb_str("01x").is_none());
    }

    #[test]
    fn padding_stays_clear() {
        let a = BitVector::ones(70);
        let b = BitVector::zeros(70);
        assert!(a.padding_is_clear());
        assert!(a.nor(&b).padding_is_clear());
        assert_eq!(a.nor(&b).iter().filter(|&x| x).count(), 0);
        assert!(a.resized(65).padding_is_clear());
        assert_eq!(a.slice(3, 61).iter().filter(|&x| x).count(), 61);
    }

    #[test]
    fn slice_unaligned() {
        let v = BitVector::from_u8s(&[1, 0, 1, 1, 0, 0, 1]);
        assert_eq!(v.slice(2, 3), BitVector::from_u8s(&[1, 1, 0]));
        assert_eq!(v.slice(0, 2), BitVector::from_u8s(&[1, 0]));
    }
}
