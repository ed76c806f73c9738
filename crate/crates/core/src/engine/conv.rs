use super::hierarchy::MemoryHierarchy;
use super::layer::ConvLayerSpec;
use super::mapping::{map_layer, AndOp, MappingPlan};
use crate::accumulator::{asr_shift, cmp_popcount, AccumulatorConfig, NvAccumulatorState};
use crate::bitplane::QuantizedTensor;
use crate::bits::BitVector;
use crate::costmodel::{layer_cost, CostParams, CostReport};
use crate::error::{Error, Result};
use crate::subarray::{SenseMode, SubArray};
use crate::tensor::IntTensor;

/// Executes a quantized convolution one output element at a time through the
/// sub-array, compressor tree, shift register and NV accumulator models.
#[derive(Clone, Debug)]
pub struct BitwiseConv {
    layer: ConvLayerSpec,
    plan: MappingPlan,
    input: QuantizedTensor,
    in_h: usize,
    in_w: usize,
    /// `[k][tile][n]` weight plane segments, one row wide.
    weight_rows: Vec<Vec<Vec<BitVector>>>,
    mats: Vec<Option<SubArray>>,
    ops: Vec<AndOp>,
    count_width: usize,
}

fn check_operand(q: &QuantizedTensor, rank: usize, bits: u32, what: &str) -> Result<()> {
    if q.shape().len() != rank {
        return Err(Error::Shape(format!(
            "{what} must have rank {rank}, got shape {:?}",
            q.shape()
        )));
    }
    if q.bits() != bits {
        return Err(Error::Shape(format!(
            "{what} is quantized to {} bits but the layer expects {bits}",
            q.bits()
        )));
    }
    Ok(())
}

impl BitwiseConv {
    /// `input` is `[C, H, W]`, `weights` is `[K, C, kh, kw]`.
    pub fn new(
        input: &QuantizedTensor,
        weights: &QuantizedTensor,
        layer: &ConvLayerSpec,
        hier: &MemoryHierarchy,
    ) -> Result<Self> {
        layer.validate()?;
        check_operand(input, 3, layer.input_bits, "input")?;
        check_operand(weights, 4, layer.weight_bits, "weights")?;
        let expected_w = [layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w];
        if weights.shape() != expected_w {
            return Err(Error::Shape(format!(
                "weights have shape {:?}, layer expects {expected_w:?}",
                weights.shape()
            )));
        }
        if input.shape()[0] != layer.in_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, layer expects {}",
                input.shape()[0],
                layer.in_channels
            )));
        }
        let (in_h, in_w) = (input.shape()[1], input.shape()[2]);
        let plan = map_layer(layer, (in_h, in_w), hier)?;
        let cols = hier.cols_per_mat;
        let count_width = (usize::BITS - cols.leading_zeros()) as usize;
        if count_width + layer.max_shift() as usize > 64 {
            return Err(Error::Parameter(format!(
                "{}-bit counts shifted by up to {} exceed 64 bits",
                count_width,
                layer.max_shift()
            )));
        }

        let l = layer.vector_len();
        let wv = weights.values();
        let weight_rows = (0..layer.out_channels)
            .map(|k| {
                (0..plan.tiles)
                    .map(|t| {
                        let span = plan.tile_columns(t);
                        (0..layer.weight_bits)
                            .map(|n| {
                                let mut row = BitVector::zeros(cols);
                                for (col, j) in span.clone().enumerate() {
                                    row.set(col, (wv[k * l + j] >> n) & 1 == 1);
                                }
                                row
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();

        Ok(Self {
            layer: layer.clone(),
            ops: plan.and_ops(),
            mats: vec![None; hier.total_mats()],
            plan,
            input: input.clone(),
            in_h,
            in_w,
            weight_rows,
            count_width,
        })
    }

    pub fn plan(&self) -> &MappingPlan {
        &self.plan
    }

    pub fn layer(&self) -> &ConvLayerSpec {
        &self.layer
    }

    pub fn positions(&self) -> usize {
        self.plan.positions()
    }

    /// Input plane segments of one receptive-field tile, zero outside the map.
    fn input_rows(&self, pos: usize, tile: usize) -> Vec<BitVector> {
        let cols = self.plan.hierarchy.cols_per_mat;
        let (oy, ox) = (pos / self.plan.out_w, pos % self.plan.out_w);
        let pad = self.layer.padding.amount() as isize;
        let stride = self.layer.stride as isize;
        let mut rows = vec![BitVector::zeros(cols); self.layer.input_bits as usize];
        for (col, j) in self.plan.tile_columns(tile).enumerate() {
            let (c, dy, dx) = self.layer.field_coord(j);
            let iy = oy as isize * stride + dy as isize - pad;
            let ix = ox as isize * stride + dx as isize - pad;
            if iy < 0 || ix < 0 || iy >= self.in_h as isize || ix >= self.in_w as isize {
                continue;
            }
            let v = self.input.values()[(c * self.in_h + iy as usize) * self.in_w + ix as usize];
            for (m, row) in rows.iter_mut().enumerate() {
                if (v >> m) & 1 == 1 {
                    row.set(col, true);
                }
            }
        }
        rows
    }

    /// Computes every output channel at position `pos` (row-major `oy * out_w + ox`),
    /// accumulating into `accs[k]`.
    pub fn compute_position(&mut self, pos: usize, accs: &mut [NvAccumulatorState]) -> Result<()> {
        if pos >= self.positions() {
            return Err(Error::Bounds {
                what: "position",
                index: pos,
                limit: self.positions(),
            });
        }
        if accs.len() != self.layer.out_channels {
            return Err(Error::Shape(format!(
                "{} accumulators for {} output channels",
                accs.len(),
                self.layer.out_channels
            )));
        }
        let (rows, cols) = (self.plan.hierarchy.rows_per_mat, self.plan.hierarchy.cols_per_mat);
        let max_shift = self.layer.max_shift();
        for tile in 0..self.plan.tiles {
            let inputs = self.input_rows(pos, tile);
            for (k, acc) in accs.iter_mut().enumerate() {
                let unit = self.plan.unit_index(0, pos, k, tile);
                let place = self.plan.placement(unit)?;
                let sa = self.mats[place.mat_index].get_or_insert_with(|| SubArray::new(rows, cols));
                for (n, row) in place.weight_rows.clone().zip(&self.weight_rows[k][tile]) {
                    sa.write_row(n, row)?;
                }
                for (r, row) in place.input_rows.clone().zip(&inputs) {
                    sa.write_row(r, row)?;
                }
                let span = place.columns.len();
                for op in &self.ops {
                    let anded = sa.compute_rows(op.weight_row, op.input_row, SenseMode::And)?;
                    sa.write_row(place.writeback_row, &anded)?;
                    let stored = sa.read_row(place.writeback_row)?;
                    let count = cmp_popcount(&stored.slice(0, span))?.count;
                    let shifted = asr_shift(&BitVector::from_uint(count, self.count_width), op.shift, max_shift)?;
                    acc.accumulate(shifted.to_uint())?;
                }
            }
        }
        Ok(())
    }
}

/// Bit-wise convolution of quantized `input` `[C, H, W]` with `weights`
/// `[K, C, kh, kw]`. Returns the unsigned integer outputs `[K, Ho, Wo]` and
/// the cost of the layer.
pub fn conv_bitwise(
    input: &QuantizedTensor,
    weights: &QuantizedTensor,
    layer: &ConvLayerSpec,
    hier: &MemoryHierarchy,
    cost: &CostParams,
) -> Result<(IntTensor, CostReport)> {
    let mut exec = BitwiseConv::new(input, weights, layer, hier)?;
    let acc_cfg = AccumulatorConfig {
        width: cost.accumulator_width,
        ..Default::default()
    };
    let k_out = layer.out_channels;
    let p = exec.positions();
    let mut out = vec![0u64; k_out * p];
    let mut accs = vec![NvAccumulatorState::new(acc_cfg); k_out];
    for pos in 0..p {
        accs.iter_mut().for_each(NvAccumulatorState::reset);
        exec.compute_position(pos, &mut accs)?;
        for (k, acc) in accs.iter().enumerate() {
            out[k * p + pos] = acc.value();
        }
    }
    let plan = exec.plan();
    let report = layer_cost(plan, layer, cost)?;
    Ok((IntTensor::new(vec![k_out, plan.out_h, plan.out_w], out)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Padding;
    use crate::oracle::conv_int_oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn q(shape: Vec<usize>, bits: u32, values: Vec<u32>) -> QuantizedTensor {
        QuantizedTensor::new(shape, bits, values).unwrap()
    }

    fn ints(t: &QuantizedTensor) -> IntTensor {
        IntTensor::new(t.shape().to_vec(), t.values().iter().map(|&v| u64::from(v)).collect()).unwrap()
    }

    #[test]
    fn two_element_dot() {
        let input = q(vec![2, 1, 1], 2, vec![3, 1]);
        let w = q(vec![1, 2, 1, 1], 2, vec![1, 2]);
        let l = ConvLayerSpec::new((1, 1), 2, 1, (2, 2));
        let (out, _) = conv_bitwise(&input, &w, &l, &MemoryHierarchy::default(), &CostParams::default()).unwrap();
        assert_eq!(out.data(), &[5]);
    }

    #[test]
    fn zero_weights() {
        let input = q(vec![1, 4, 4], 4, (0..16).collect());
        let w = q(vec![2, 1, 3, 3], 4, vec![0; 18]);
        let l = ConvLayerSpec::new((3, 3), 1, 2, (4, 4));
        let (out, _) = conv_bitwise(&input, &w, &l, &MemoryHierarchy::default(), &CostParams::default()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn binary_3x3_on_8x8_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let input = q(vec![1, 8, 8], 1, (0..64).map(|_| rng.random_range(0..2)).collect());
        let w = q(vec![1, 1, 3, 3], 1, (0..9).map(|_| rng.random_range(0..2)).collect());
        let mut l = ConvLayerSpec::new((3, 3), 1, 1, (1, 1));
        l.padding = Padding::Zero(1);
        let (out, _) = conv_bitwise(&input, &w, &l, &MemoryHierarchy::default(), &CostParams::default()).unwrap();
        assert_eq!(out, conv_int_oracle(&ints(&input), &ints(&w), &l).unwrap());
    }

    #[test]
    fn tiled_vectors_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hier = MemoryHierarchy {
            cols_per_mat: 16,
            groups: 1,
            banks_per_group: [1, 1],
            ..Default::default()
        };
        let l = ConvLayerSpec::new((3, 3), 5, 3, (3, 2));
        let input = q(vec![5, 4, 4], 2, (0..80).map(|_| rng.random_range(0..4)).collect());
        let w = q(vec![3, 5, 3, 3], 3, (0..135).map(|_| rng.random_range(0..8)).collect());
        let (out, _) = conv_bitwise(&input, &w, &l, &hier, &CostParams::default()).unwrap();
        assert_eq!(out, conv_int_oracle(&ints(&input), &ints(&w), &l).unwrap());
    }

    #[test]
    fn shape_mismatches_rejected() {
        let hier = MemoryHierarchy::default();
        let cost = CostParams::default();
        let l = ConvLayerSpec::new((1, 1), 2, 1, (2, 2));
        let good_w = q(vec![1, 2, 1, 1], 2, vec![1, 2]);
        let bad_c = q(vec![3, 1, 1], 2, vec![0, 0, 0]);
        assert!(matches!(conv_bitwise(&bad_c, &good_w, &l, &hier, &cost), Err(Error::Shape(_))));
        let bad_bits = q(vec![2, 1, 1], 3, vec![0, 0]);
        assert!(matches!(conv_bitwise(&bad_bits, &good_w, &l, &hier, &cost), Err(Error::Shape(_))));
    }

    #[test]
    fn narrow_accumulator_saturates() {
        let input = q(vec![4, 1, 1], 8, vec![255; 4]);
        let w = q(vec![1, 4, 1, 1], 8, vec![255; 4]);
        let l = ConvLayerSpec::new((1, 1), 4, 1, (8, 8));
        let cost = CostParams {
            accumulator_width: 16,
            ..Default::default()
        };
        let r = conv_bitwise(&input, &w, &l, &MemoryHierarchy::default(), &cost);
        assert!(matches!(r, Err(Error::Saturated { width: 16 })));
    }
}
