//! Accumulation datapath: 4:2 compressor trees for bit counting, the adaptive
//! shift register that applies the `2^(m+n)` weight, and the non-volatile
//! full-adder row that accumulates partial results and survives power loss.

use serde::{Deserialize, Serialize};

use crate::bits::BitVector;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompressorOut {
    pub sum: bool,
    pub carry: bool,
    pub cout: bool,
}

/// One 4:2 compressor cell.
///
/// `x1 + x2 + x3 + x4 + cin == sum + 2 * (carry + cout)`, and `cout` does not
/// depend on `cin`, so a row of cells has no horizontal ripple.
#[inline]
pub fn compress_4_2(x1: bool, x2: bool, x3: bool, x4: bool, cin: bool) -> CompressorOut {
    let x12 = x1 ^ x2;
    let x1234 = x12 ^ x3 ^ x4;
    CompressorOut {
        sum: x1234 ^ cin,
        carry: if x1234 { cin } else { x4 },
        cout: if x12 { x3 } else { x1 },
    }
}

#[inline]
fn full_add(a: bool, b: bool, c: bool) -> (bool, bool) {
    (a ^ b ^ c, (a & b) | (c & (a ^ b)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Popcount {
    pub count: u64,
    /// Carry-save reduction stages until every column holds at most two bits.
    pub stages: u32,
    /// Width of the final two-operand ripple adder.
    pub adder_bits: u32,
}

/// One reduction stage over per-column bit counts (or bits). Returns the next
/// column contents. `compress` evaluates one compressor cell.
fn reduce_stage<T: Copy + Default>(
    columns: &[Vec<T>],
    mut compress: impl FnMut([T; 4], T) -> (T, T, T),
) -> Vec<Vec<T>> {
    let mut next: Vec<Vec<T>> = vec![Vec::new(); columns.len() + 2];
    let mut cins: Vec<T> = Vec::new();
    for (j, bits) in columns.iter().enumerate() {
        let mut pool = std::mem::take(&mut cins);
        pool.reverse();
        let mut couts = Vec::new();
        if bits.len() > 2 {
            for chunk in bits.chunks(4) {
                if chunk.len() < 3 {
                    next[j].extend_from_slice(chunk);
                    continue;
                }
                let mut x = [T::default(); 4];
                x[..chunk.len()].copy_from_slice(chunk);
                let cin = pool.pop().unwrap_or_default();
                let (s, c, co) = compress(x, cin);
                next[j].push(s);
                next[j + 1].push(c);
                couts.push(co);
            }
        } else {
            next[j].extend_from_slice(bits);
        }
        // carry-ins that found no compressor pass straight through
        next[j].extend(pool.into_iter().rev());
        cins = couts;
    }
    next[columns.len()].extend(cins);
    while next.last().is_some_and(|c| c.is_empty()) {
        next.pop();
    }
    next
}

/// Trees come in power-of-two sizes; unused inputs are tied to zero.
fn pad_to_tree<T: Copy + Default>(mut bits: Vec<T>) -> Vec<T> {
    if bits.len() > 2 {
        bits.resize(bits.len().next_power_of_two(), T::default());
    }
    bits
}

/// Size of the compressor tree for a `len`-bit vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeShape {
    pub stages: u32,
    pub compressors: u64,
    pub adder_bits: u32,
}

/// The tree shape is data-independent, so this matches [`cmp_popcount`]
/// without evaluating any bits.
pub fn tree_shape(len: usize) -> TreeShape {
    let mut columns: Vec<Vec<()>> = vec![pad_to_tree(vec![(); len])];
    let mut stages = 0;
    let mut compressors = 0u64;
    while columns.iter().any(|c| c.len() > 2) {
        columns = reduce_stage(&columns, |_, _| {
            compressors += 1;
            ((), (), ())
        });
        stages += 1;
    }
    TreeShape {
        stages,
        compressors,
        adder_bits: columns.len() as u32,
    }
}

pub fn tree_stages(len: usize) -> u32 {
    tree_shape(len).stages
}

/// Counts the set bits of `v` through a tree of 4:2 compressors followed by a
/// ripple adder over the last two rows.
pub fn cmp_popcount(v: &BitVector) -> Result<Popcount> {
    if v.is_empty() {
        return Err(Error::EmptyVector);
    }
    let mut columns: Vec<Vec<bool>> = vec![pad_to_tree(v.iter().collect())];
    let mut stages = 0;
    while columns.iter().any(|c| c.len() > 2) {
        columns = reduce_stage(&columns, |x, cin| {
            let o = compress_4_2(x[0], x[1], x[2], x[3], cin);
            (o.sum, o.carry, o.cout)
        });
        stages += 1;
    }
    let mut count = 0u64;
    let mut carry = false;
    for (j, col) in columns.iter().enumerate() {
        let a = col.first().copied().unwrap_or(false);
        let b = col.get(1).copied().unwrap_or(false);
        let (s, c) = full_add(a, b, carry);
        count |= u64::from(s) << j;
        carry = c;
    }
    count |= u64::from(carry) << columns.len();
    Ok(Popcount {
        count,
        stages,
        adder_bits: columns.len() as u32,
    })
}

/// MUX-selected shift register with `input_width + max_shift` flip-flops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShiftRegister {
    input_width: usize,
    max_shift: u32,
    cells: BitVector,
}

impl ShiftRegister {
    pub fn new(input_width: usize, max_shift: u32) -> Self {
        Self {
            input_width,
            max_shift,
            cells: BitVector::zeros(input_width + max_shift as usize),
        }
    }

    pub fn ff_count(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &BitVector {
        &self.cells
    }

    /// Latches `input` shifted left by `shift`; vacated flip-flops load 0.
    pub fn load(&mut self, input: &BitVector, shift: u32) -> Result<&BitVector> {
        if shift > self.max_shift {
            return Err(Error::ShiftRange {
                shift,
                max_shift: self.max_shift,
            });
        }
        if input.len() != self.input_width {
            return Err(Error::Shape(format!(
                "shift register takes {} input bits, got {}",
                self.input_width,
                input.len()
            )));
        }
        let s = shift as usize;
        for j in 0..self.cells.len() {
            let bit = j >= s && j - s < self.input_width && input.get(j - s);
            self.cells.set(j, bit);
        }
        Ok(&self.cells)
    }
}

/// Shifts a `w`-bit value left by `shift` into a `w + max_shift` bit result.
pub fn asr_shift(value: &BitVector, shift: u32, max_shift: u32) -> Result<BitVector> {
    let mut reg = ShiftRegister::new(value.len(), max_shift);
    reg.load(value, shift)?;
    Ok(reg.cells)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NvMode {
    /// Sum and carry each backed by a non-volatile flip-flop.
    #[default]
    TwoFf,
    /// Only the carry word is backed; restore loads it into the sum register.
    OneFf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccumulatorConfig {
    pub width: u32,
    pub checkpoint_interval: u32,
    pub mode: NvMode,
}

impl Default for AccumulatorConfig {
    fn default() -> Self {
        Self {
            width: 32,
            checkpoint_interval: 20,
            mode: NvMode::TwoFf,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct NvCells {
    sum: u64,
    carry: u64,
}

/// Running accumulator built from a row of `width` full adders, each with a
/// sum and a carry-out flip-flop, plus non-volatile copies.
///
/// Checkpoints are two-phase: the inactive NV slot is written first, then a
/// validity pointer flips to it. Losing power between the two phases leaves
/// the previous checkpoint active.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NvAccumulatorState {
    config: AccumulatorConfig,
    volatile_sum: u64,
    /// Carry-out of every adder cell from the latest addition.
    volatile_carry: u64,
    saturated: bool,
    slots: [NvCells; 2],
    active: Option<usize>,
    pending: Option<usize>,
    frames_since_checkpoint: u32,
}

impl NvAccumulatorState {
    pub fn new(config: AccumulatorConfig) -> Self {
        assert!((1..=63).contains(&config.width), "accumulator width must be 1..=63");
        assert!(config.checkpoint_interval >= 1, "checkpoint interval must be >= 1");
        Self {
            config,
            volatile_sum: 0,
            volatile_carry: 0,
            saturated: false,
            slots: [NvCells::default(); 2],
            active: None,
            pending: None,
            frames_since_checkpoint: 0,
        }
    }

    pub fn config(&self) -> &AccumulatorConfig {
        &self.config
    }

    pub fn value(&self) -> u64 {
        self.volatile_sum
    }

    pub fn carry(&self) -> u64 {
        self.volatile_carry
    }

    pub fn saturated(&self) -> bool {
        self.saturated
    }

    pub fn frames_since_checkpoint(&self) -> u32 {
        self.frames_since_checkpoint
    }

    pub fn has_checkpoint(&self) -> bool {
        self.active.is_some()
    }

    fn max_value(&self) -> u64 {
        (1u64 << self.config.width) - 1
    }

    /// `sum += addend`. On overflow the sum clamps to the maximum and the
    /// saturation flag is raised.
    pub fn accumulate(&mut self, addend: u64) -> Result<()> {
        let a = self.volatile_sum;
        let total = u128::from(a) + u128::from(addend);
        let max = self.max_value();
        let wrapped = (total as u64) & max;
        let carry_in = (a ^ (addend & max) ^ wrapped) >> 1;
        if total > u128::from(max) {
            self.volatile_carry = carry_in | (1 << (self.config.width - 1));
            self.volatile_sum = max;
            self.saturated = true;
            return Err(Error::Saturated {
                width: self.config.width,
            });
        }
        self.volatile_carry = carry_in;
        self.volatile_sum = wrapped;
        Ok(())
    }

    /// Clears the volatile registers (start of a fresh accumulation).
    pub fn reset(&mut self) {
        self.volatile_sum = 0;
        self.volatile_carry = 0;
        self.saturated = false;
    }

    /// Phase one: copy volatile state into the inactive NV slot.
    pub fn begin_checkpoint(&mut self) {
        let slot = self.active.map_or(0, |a| 1 - a);
        self.slots[slot] = match self.config.mode {
            NvMode::TwoFf => NvCells {
                sum: self.volatile_sum,
                carry: self.volatile_carry,
            },
            NvMode::OneFf => NvCells {
                sum: 0,
                carry: self.volatile_carry,
            },
        };
        self.pending = Some(slot);
    }

    /// Phase two: flip the validity pointer to the freshly written slot.
    pub fn commit_checkpoint(&mut self) {
        if let Some(slot) = self.pending.take() {
            self.active = Some(slot);
            self.frames_since_checkpoint = 0;
        }
    }

    pub fn checkpoint(&mut self) {
        self.begin_checkpoint();
        self.commit_checkpoint();
    }

    /// Counts a frame boundary, checkpointing when the interval is reached.
    /// Returns whether a checkpoint fired.
    pub fn end_frame(&mut self) -> bool {
        self.frames_since_checkpoint += 1;
        if self.frames_since_checkpoint >= self.config.checkpoint_interval {
            self.checkpoint();
            true
        } else {
            false
        }
    }

    /// Volatile flip-flops lose their contents; an unfinished checkpoint is abandoned.
    pub fn power_loss(&mut self) {
        self.reset();
        self.pending = None;
    }

    /// Reloads the volatile registers from the active NV slot.
    ///
    /// With no valid checkpoint the registers reset to zero and
    /// [`Error::ColdStart`] is returned.
    pub fn restore(&mut self) -> Result<()> {
        self.pending = None;
        self.frames_since_checkpoint = 0;
        self.saturated = false;
        let Some(slot) = self.active else {
            self.volatile_sum = 0;
            self.volatile_carry = 0;
            return Err(Error::ColdStart);
        };
        let cells = self.slots[slot];
        match self.config.mode {
            NvMode::TwoFf => {
                self.volatile_sum = cells.sum;
                self.volatile_carry = cells.carry;
            }
            NvMode::OneFf => {
                self.volatile_sum = cells.carry;
                self.volatile_carry = 0;
            }
        }
        Ok(())
    }

    /// Whether the volatile state differs from what a restore would produce.
    pub fn is_dirty(&self) -> bool {
        match self.active {
            None => self.volatile_sum != 0 || self.volatile_carry != 0,
            Some(slot) => {
                let c = self.slots[slot];
                match self.config.mode {
                    NvMode::TwoFf => c.sum != self.volatile_sum || c.carry != self.volatile_carry,
                    NvMode::OneFf => c.carry != self.volatile_carry,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bit(x: u32, i: u32) -> bool {
        (x >> i) & 1 == 1
    }

    #[test]
    fn compressor_identity_exhaustive() {
        for x in 0..32u32 {
            let o = compress_4_2(bit(x, 0), bit(x, 1), bit(x, 2), bit(x, 3), bit(x, 4));
            let lhs = x.count_ones();
            let rhs = o.sum as u32 + 2 * (o.carry as u32 + o.cout as u32);
            assert_eq!(lhs, rhs, "input {x:05b}");
        }
    }

    #[test]
    fn compressor_examples() {
        let o = compress_4_2(false, false, false, false, false);
        assert_eq!((o.sum, o.carry, o.cout), (false, false, false));
        let o = compress_4_2(true, true, true, true, true);
        assert_eq!((o.sum, o.carry, o.cout), (true, true, true));
        let o = compress_4_2(true, true, false, false, false);
        assert_eq!((o.sum, o.carry, o.cout), (false, false, true));
    }

    #[test]
    fn cout_ignores_cin() {
        for x in 0..16u32 {
            let a = compress_4_2(bit(x, 0), bit(x, 1), bit(x, 2), bit(x, 3), false);
            let b = compress_4_2(bit(x, 0), bit(x, 1), bit(x, 2), bit(x, 3), true);
            assert_eq!(a.cout, b.cout);
        }
    }

    #[test]
    fn popcount_small_cases() {
        assert!(matches!(cmp_popcount(&BitVector::zeros(0)), Err(Error::EmptyVector)));
        assert_eq!(cmp_popcount(&BitVector::zeros(8)).unwrap().count, 0);
        assert_eq!(cmp_popcount(&BitVector::ones(8)).unwrap().count, 8);
        assert_eq!(cmp_popcount(&BitVector::ones(1)).unwrap().count, 1);
    }

    #[test]
    fn popcount_all_bytes() {
        for b in 0..256u64 {
            let v = BitVector::from_uint(b, 8);
            let p = cmp_popcount(&v).unwrap();
            assert_eq!(p.count, u64::from((b as u8).count_ones()), "byte {b:08b}");
            assert!(p.stages <= 2);
        }
    }

    #[test]
    fn popcount_random_long_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10_000 {
            let len = rng.random_range(1..=600);
            let density = rng.random_range(0.0..=1.0);
            let v = BitVector::from_bools((0..len).map(|_| rng.random_bool(density)));
            let expected = v.iter().filter(|&b| b).count() as u64;
            let p = cmp_popcount(&v).unwrap();
            assert_eq!(p.count, expected, "len {len}");
            assert_eq!(p.stages, tree_stages(len));
            assert_eq!(p.adder_bits, tree_shape(len).adder_bits);
        }
    }

    #[test]
    fn tree_depth_grows_logarithmically() {
        assert_eq!(tree_stages(1), 0);
        assert_eq!(tree_stages(2), 0);
        assert_eq!(tree_stages(8), 2);
        let mut prev = 0;
        for len in [4, 16, 64, 256, 512, 4096] {
            let s = tree_stages(len);
            assert!(s >= prev);
            assert!(s as usize <= 2 * (usize::BITS - len.leading_zeros()) as usize);
            prev = s;
        }
    }

    #[test]
    fn asr_shift_example() {
        let v = BitVector::from_msb_str("1001").unwrap();
        assert_eq!(asr_shift(&v, 1, 2).unwrap().to_msb_string(), "010010");
        assert_eq!(asr_shift(&v, 0, 2).unwrap().to_msb_string(), "001001");
        assert_eq!(asr_shift(&v, 2, 2).unwrap().to_msb_string(), "100100");
        assert!(matches!(asr_shift(&v, 3, 2), Err(Error::ShiftRange { shift: 3, max_shift: 2 })));
    }

    #[test]
    fn asr_ff_count_rule() {
        assert_eq!(ShiftRegister::new(4, 2).ff_count(), 6);
        assert_eq!(ShiftRegister::new(10, 14).ff_count(), 24);
    }

    #[test]
    fn asr_multiplies_exhaustively() {
        for w in 1..=8usize {
            for max_shift in 0..=4u32 {
                for v in 0..(1u64 << w) {
                    for s in 0..=max_shift {
                        let out = asr_shift(&BitVector::from_uint(v, w), s, max_shift).unwrap();
                        assert_eq!(out.len(), w + max_shift as usize);
                        assert_eq!(out.to_uint(), v << s);
                    }
                }
            }
        }
    }

    fn acc(mode: NvMode) -> NvAccumulatorState {
        NvAccumulatorState::new(AccumulatorConfig {
            mode,
            ..Default::default()
        })
    }

    #[test]
    fn accumulate_examples() {
        let mut a = acc(NvMode::TwoFf);
        a.accumulate(5).unwrap();
        assert_eq!(a.value(), 5);
        a.accumulate(0).unwrap();
        assert_eq!(a.value(), 5);
    }

    #[test]
    fn accumulate_matches_integer_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let mut a = acc(NvMode::TwoFf);
            let addends: Vec<u64> = (0..rng.random_range(0..100)).map(|_| rng.random_range(0..1 << 20)).collect();
            for &x in &addends {
                a.accumulate(x).unwrap();
            }
            assert_eq!(a.value(), addends.iter().sum::<u64>());
        }
    }

    #[test]
    fn carry_word_tracks_ripple() {
        let mut a = acc(NvMode::TwoFf);
        a.accumulate(0b0111).unwrap();
        a.accumulate(0b0001).unwrap();
        // 0111 + 0001: cells 0, 1, 2 produce a carry-out
        assert_eq!(a.carry(), 0b0111);
        assert_eq!(a.value(), 0b1000);
    }

    #[test]
    fn overflow_saturates() {
        let mut a = NvAccumulatorState::new(AccumulatorConfig {
            width: 8,
            ..Default::default()
        });
        a.accumulate(200).unwrap();
        assert!(matches!(a.accumulate(100), Err(Error::Saturated { width: 8 })));
        assert!(a.saturated());
        assert_eq!(a.value(), 255);
    }

    #[test]
    fn checkpoint_then_restore() {
        let mut a = acc(NvMode::TwoFf);
        a.accumulate(11).unwrap();
        a.checkpoint();
        a.accumulate(4).unwrap();
        a.power_loss();
        assert_eq!(a.value(), 0);
        a.restore().unwrap();
        assert_eq!(a.value(), 11);
        // restore with nothing in between is a no-op
        a.restore().unwrap();
        assert_eq!(a.value(), 11);
    }

    #[test]
    fn double_checkpoint_is_idempotent() {
        let mut a = acc(NvMode::TwoFf);
        a.accumulate(9).unwrap();
        a.checkpoint();
        let once = a.clone();
        a.checkpoint();
        let mut x = once.clone();
        let mut y = a.clone();
        x.power_loss();
        y.power_loss();
        x.restore().unwrap();
        y.restore().unwrap();
        assert_eq!(x.value(), y.value());
        assert_eq!(x.carry(), y.carry());
        assert!(!a.is_dirty());
    }

    #[test]
    fn restore_without_checkpoint_cold_starts() {
        let mut a = acc(NvMode::TwoFf);
        a.accumulate(3).unwrap();
        assert!(matches!(a.restore(), Err(Error::ColdStart)));
        assert_eq!(a.value(), 0);
    }

    #[test]
    fn torn_checkpoint_keeps_previous() {
        let mut a = acc(NvMode::TwoFf);
        a.accumulate(7).unwrap();
        a.checkpoint();
        a.accumulate(5).unwrap();
        a.begin_checkpoint();
        a.power_loss();
        a.restore().unwrap();
        assert_eq!(a.value(), 7);
    }

    #[test]
    fn one_ff_restores_carry_into_sum() {
        let mut a = acc(NvMode::OneFf);
        a.accumulate(0b0111).unwrap();
        a.accumulate(0b0001).unwrap();
        a.checkpoint();
        a.power_loss();
        a.restore().unwrap();
        assert_eq!(a.value(), 0b0111);
        assert_eq!(a.carry(), 0);
    }

    #[test]
    fn end_frame_fires_at_interval() {
        let mut a = NvAccumulatorState::new(AccumulatorConfig {
            checkpoint_interval: 3,
            ..Default::default()
        });
        let fired: Vec<bool> = (0..7)
            .map(|i| {
                a.accumulate(i).unwrap();
                let f = a.end_frame();
                assert!(a.frames_since_checkpoint() < 3);
                f
            })
            .collect();
        assert_eq!(fired, [false, false, true, false, false, true, false]);
    }
}
