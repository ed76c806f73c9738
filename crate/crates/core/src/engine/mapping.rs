use std::ops::Range;

use serde::Serialize;

use super::hierarchy::{MatCoord, MemoryHierarchy};
use super::layer::ConvLayerSpec;
use crate::error::{Error, Result};

/// Placement of a quantized layer onto mats.
///
/// The work is split into units: one unit is one output element (batch
/// item, position, output channel) restricted to one column tile of its
/// receptive field. Units are dealt to mats round-robin in index order. Inside
/// a unit's mat, weight planes `C_0(W)..C_{n-1}(W)` occupy rows `0..n`, input
/// planes `C_0(I)..C_{m-1}(I)` the following `m` rows and the AND result is
/// written back to the lowest free row `n + m`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MappingPlan {
    pub hierarchy: MemoryHierarchy,
    pub batch: usize,
    pub out_channels: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub vector_len: usize,
    pub tiles: usize,
    pub weight_bits: u32,
    pub input_bits: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UnitPlacement {
    pub unit: usize,
    pub mat_index: usize,
    pub coord: MatCoord,
    /// Position of the unit in its mat's sequential schedule.
    pub round: usize,
    pub tile: usize,
    pub columns: Range<usize>,
    pub weight_rows: Range<usize>,
    pub input_rows: Range<usize>,
    pub writeback_row: usize,
}

/// One AND micro-op between weight plane `n` and input plane `m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AndOp {
    pub m: u32,
    pub n: u32,
    pub weight_row: usize,
    pub input_row: usize,
    pub shift: u32,
}

/// Maps a quantized layer applied to an `input_hw` feature map.
pub fn map_layer(layer: &ConvLayerSpec, input_hw: (usize, usize), hier: &MemoryHierarchy) -> Result<MappingPlan> {
    layer.validate()?;
    hier.validate()?;
    if !layer.quantize {
        return Err(Error::Parameter("full-precision layers run on the EPU and are not mapped".into()));
    }
    let required = (layer.weight_bits + layer.input_bits) as usize + 1;
    if required > hier.rows_per_mat {
        return Err(Error::Capacity {
            required,
            available: hier.rows_per_mat,
        });
    }
    let (out_h, out_w) = layer.output_dims(input_hw.0, input_hw.1)?;
    let vector_len = layer.vector_len();
    Ok(MappingPlan {
        hierarchy: *hier,
        batch: 1,
        out_channels: layer.out_channels,
        out_h,
        out_w,
        vector_len,
        tiles: vector_len.div_ceil(hier.cols_per_mat),
        weight_bits: layer.weight_bits,
        input_bits: layer.input_bits,
    })
}

impl MappingPlan {
    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn output_elements(&self) -> usize {
        self.batch * self.positions() * self.out_channels
    }

    pub fn units(&self) -> usize {
        self.output_elements() * self.tiles
    }

    pub fn rounds(&self) -> usize {
        self.units().div_ceil(self.hierarchy.total_mats())
    }

    pub fn mats_used(&self) -> usize {
        self.units().min(self.hierarchy.total_mats())
    }

    /// Operand rows of one output element: `(n + m) * tiles`.
    pub fn operand_rows(&self) -> usize {
        (self.weight_bits + self.input_bits) as usize * self.tiles
    }

    /// Rows a mat needs while running one unit, including write-back.
    pub fn rows_per_unit(&self) -> usize {
        (self.weight_bits + self.input_bits) as usize + 1
    }

    pub fn tile_columns(&self, tile: usize) -> Range<usize> {
        let cols = self.hierarchy.cols_per_mat;
        let start = tile * cols;
        start..(start + cols).min(self.vector_len)
    }

    pub fn unit_index(&self, batch: usize, pos: usize, k: usize, tile: usize) -> usize {
        ((batch * self.positions() + pos) * self.out_channels + k) * self.tiles + tile
    }

    pub fn placement(&self, unit: usize) -> Result<UnitPlacement> {
        if unit >= self.units() {
            return Err(Error::Bounds {
                what: "unit",
                index: unit,
                limit: self.units(),
            });
        }
        let total = self.hierarchy.total_mats();
        let mat_index = unit % total;
        let n = self.weight_bits as usize;
        let m = self.input_bits as usize;
        let tile = unit % self.tiles;
        Ok(UnitPlacement {
            unit,
            mat_index,
            coord: self.hierarchy.coord(mat_index)?,
            round: unit / total,
            tile,
            columns: self.tile_columns(tile),
            weight_rows: 0..n,
            input_rows: n..n + m,
            writeback_row: n + m,
        })
    }

    /// AND micro-ops of one unit in issue order.
    pub fn and_ops(&self) -> Vec<AndOp> {
        let n_bits = self.weight_bits;
        (0..self.input_bits)
            .flat_map(|m| {
                (0..n_bits).map(move |n| AndOp {
                    m,
                    n,
                    weight_row: n as usize,
                    input_row: (n_bits + m) as usize,
                    shift: m + n,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_layer_uses_one_mat_two_rows() {
        let l = ConvLayerSpec::new((1, 1), 1, 1, (1, 1));
        let p = map_layer(&l, (1, 1), &MemoryHierarchy::default()).unwrap();
        assert_eq!(p.mats_used(), 1);
        assert_eq!(p.operand_rows(), 2);
        let u = p.placement(0).unwrap();
        assert_eq!((u.weight_rows, u.input_rows, u.writeback_row), (0..1, 1..2, 2));
    }

    #[test]
    fn three_bit_operands_share_a_mat() {
        let l = ConvLayerSpec::new((1, 3), 1, 1, (3, 3));
        let p = map_layer(&l, (1, 3), &MemoryHierarchy::default()).unwrap();
        let u = p.placement(0).unwrap();
        assert_eq!(u.weight_rows.len(), 3);
        assert_eq!(u.input_rows.len(), 3);
        assert_eq!(p.and_ops().len(), 9);
        assert!(p.and_ops().iter().all(|op| op.weight_row != op.input_row));
    }

    #[test]
    fn long_vectors_are_tiled() {
        let l = ConvLayerSpec::new((3, 3), 128, 2, (2, 4));
        let p = map_layer(&l, (3, 3), &MemoryHierarchy::default()).unwrap();
        assert_eq!(p.vector_len, 1152);
        assert_eq!(p.tiles, 3);
        assert_eq!(p.operand_rows(), 18);
        assert_eq!(p.tile_columns(2), 1024..1152);
    }

    #[test]
    fn capacity_error_reports_rows() {
        let h = MemoryHierarchy {
            rows_per_mat: 8,
            ..Default::default()
        };
        let l = ConvLayerSpec::new((1, 1), 1, 1, (4, 4));
        match map_layer(&l, (1, 1), &h) {
            Err(Error::Capacity { required, available }) => assert_eq!((required, available), (9, 8)),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn round_robin_wraps() {
        let h = MemoryHierarchy {
            groups: 1,
            banks_per_group: [1, 1],
            ..Default::default()
        };
        let l = ConvLayerSpec::new((1, 1), 1, 3, (1, 1));
        let p = map_layer(&l, (2, 1), &h).unwrap();
        assert_eq!(p.units(), 6);
        assert_eq!(p.rounds(), 2);
        assert_eq!(p.placement(5).unwrap().mat_index, 1);
        assert_eq!(p.placement(5).unwrap().round, 1);
        assert!(p.placement(6).is_err());
    }
}
