//! Latency, energy, storage and throughput accounting.
//!
//! Energies are per micro-op placeholders in picojoules. They set the
//! relative weight of phases and let the two accumulation modes be compared;
//! they are not calibrated against any circuit.
//!
//! Cycle charging per unit (one output element, one column tile of length
//! `L`, `n` weight bits, `m` input bits):
//!
//! | phase       | cycles                         |
//! |-------------|--------------------------------|
//! | AND         | `(n + m)` operand writes + `n*m` |
//! | write-back  | `n*m`                          |
//! | CMP         | `n*m * popcount_cycles(L)`     |
//! | shift       | `n*m`                          |
//! | accumulate  | `n*m * ceil(width * t_fa / t_cycle)` |
//!
//! `popcount_cycles` is the compressor tree depth plus one final-adder cycle
//! in compressor mode, and `w * ceil(L / w)` for a `w`-bit serial counter.
//! Units are dealt round-robin over all mats; layer latency is the number of
//! rounds times the cycles of the longest unit.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::accumulator::{tree_shape, NvMode};
use crate::engine::{ConvLayerSpec, MappingPlan};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccumulationMode {
    #[default]
    Compressor,
    /// Serial bit counter baseline.
    Serial,
}

impl fmt::Display for AccumulationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccumulationMode::Compressor => "compressor",
            AccumulationMode::Serial => "serial",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    pub t_cycle_ns: f64,
    pub t_fa_ps: f64,
    /// Per row-pair AND sense.
    pub e_and_pj: f64,
    /// Per row write.
    pub e_write_pj: f64,
    /// Per row read into the counter.
    pub e_read_pj: f64,
    /// Per 4:2 compressor cell evaluation.
    pub e_compress_pj: f64,
    /// Per serial counter step.
    pub e_serial_step_pj: f64,
    /// Per shift-register flip-flop load.
    pub e_shift_pj: f64,
    /// Per full-adder bit operation.
    pub e_fa_pj: f64,
    /// Per non-volatile bit written.
    pub e_nv_write_pj: f64,
    /// Per EPU element operation.
    pub e_epu_pj: f64,
    pub mode: AccumulationMode,
    pub serial_bitcount_width: usize,
    pub accumulator_width: u32,
    /// Frames between accumulator checkpoints.
    pub checkpoint_interval: u32,
    pub nv_mode: NvMode,
    /// EPU operations per cycle.
    pub epu_lanes: usize,
    /// Relative area used to normalize throughput.
    pub area_units: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            t_cycle_ns: 2.0,
            t_fa_ps: 58.0,
            e_and_pj: 0.5,
            e_write_pj: 1.0,
            e_read_pj: 0.3,
            e_compress_pj: 0.02,
            e_serial_step_pj: 0.05,
            e_shift_pj: 0.01,
            e_fa_pj: 0.005,
            e_nv_write_pj: 0.1,
            e_epu_pj: 0.5,
            mode: AccumulationMode::Compressor,
            serial_bitcount_width: 8,
            accumulator_width: 32,
            checkpoint_interval: 20,
            nv_mode: NvMode::TwoFf,
            epu_lanes: 64,
            area_units: 1.0,
        }
    }
}

impl CostParams {
    /// Defaults with the serial bit counter.
    pub fn serial_baseline() -> Self {
        Self {
            mode: AccumulationMode::Serial,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("t_cycle_ns", self.t_cycle_ns),
            ("t_fa_ps", self.t_fa_ps),
            ("e_and_pj", self.e_and_pj),
            ("e_write_pj", self.e_write_pj),
            ("e_read_pj", self.e_read_pj),
            ("e_compress_pj", self.e_compress_pj),
            ("e_serial_step_pj", self.e_serial_step_pj),
            ("e_shift_pj", self.e_shift_pj),
            ("e_fa_pj", self.e_fa_pj),
            ("e_nv_write_pj", self.e_nv_write_pj),
            ("e_epu_pj", self.e_epu_pj),
            ("area_units", self.area_units),
        ];
        for (name, v) in reals {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("cost.{name} = {v} must be finite and >= 0")));
            }
        }
        if self.t_cycle_ns <= 0.0 || self.area_units <= 0.0 {
            return Err(Error::Config("cost.t_cycle_ns and cost.area_units must be > 0".into()));
        }
        if self.serial_bitcount_width == 0 || self.epu_lanes == 0 || self.checkpoint_interval == 0 {
            return Err(Error::Config(
                "cost.serial_bitcount_width, cost.epu_lanes and cost.checkpoint_interval must be >= 1".into(),
            ));
        }
        if !(1..=63).contains(&self.accumulator_width) {
            return Err(Error::Config("cost.accumulator_width must be in 1..=63".into()));
        }
        Ok(())
    }

    /// Cycles for one accumulator addition, `ceil(width * t_fa / t_cycle)`, at least 1.
    pub fn fa_cycles(&self) -> u64 {
        let ns = f64::from(self.accumulator_width) * self.t_fa_ps / 1000.0;
        ((ns / self.t_cycle_ns).ceil() as u64).max(1)
    }

    /// Non-volatile bits written per accumulator checkpoint.
    pub fn nv_bits_per_accumulator(&self) -> u64 {
        let w = u64::from(self.accumulator_width);
        match self.nv_mode {
            NvMode::TwoFf => 2 * w,
            NvMode::OneFf => w,
        }
    }
}

/// Cycles to count the bits of an `len`-bit vector.
pub fn popcount_cycles(len: usize, params: &CostParams) -> u64 {
    if len == 0 {
        return 0;
    }
    match params.mode {
        AccumulationMode::Compressor => u64::from(tree_shape(len).stages) + 1,
        AccumulationMode::Serial => {
            let w = params.serial_bitcount_width;
            (w * len.div_ceil(w)) as u64
        }
    }
}

/// Count, shift and add cycles for one popcount result.
pub fn accumulation_cycles(len: usize, params: &CostParams) -> u64 {
    popcount_cycles(len, params) + 1 + params.fa_cycles()
}

fn popcount_energy(len: usize, params: &CostParams) -> f64 {
    match params.mode {
        AccumulationMode::Compressor => {
            let t = tree_shape(len);
            t.compressors as f64 * params.e_compress_pj + f64::from(t.adder_bits) * params.e_fa_pj
        }
        AccumulationMode::Serial => popcount_cycles(len, params) as f64 * params.e_serial_step_pj,
    }
}

/// Checkpoint cycles: shadow write and pointer flip per dirty accumulator,
/// then the same two phases for the progress record.
pub fn checkpoint_cycles(dirty_accumulators: usize) -> u64 {
    2 * dirty_accumulators as u64 + 2
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseCost {
    pub cycles: u64,
    pub energy_pj: f64,
}

impl PhaseCost {
    fn add(&mut self, o: PhaseCost) {
        self.cycles += o.cycles;
        self.energy_pj += o.energy_pj;
    }

    fn scaled(self, cycles: u64, energy: f64) -> PhaseCost {
        PhaseCost {
            cycles: self.cycles * cycles,
            energy_pj: self.energy_pj * energy,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Phases {
    pub and: PhaseCost,
    pub write_back: PhaseCost,
    pub cmp: PhaseCost,
    pub shift: PhaseCost,
    pub accumulate: PhaseCost,
    pub nv_checkpoint: PhaseCost,
    pub epu: PhaseCost,
}

impl Phases {
    pub const NAMES: [&'static str; 7] = ["and", "write_back", "cmp", "shift", "accumulate", "nv_checkpoint", "epu"];

    pub fn entries(&self) -> [(&'static str, PhaseCost); 7] {
        [
            ("and", self.and),
            ("write_back", self.write_back),
            ("cmp", self.cmp),
            ("shift", self.shift),
            ("accumulate", self.accumulate),
            ("nv_checkpoint", self.nv_checkpoint),
            ("epu", self.epu),
        ]
    }

    fn entries_mut(&mut self) -> [&mut PhaseCost; 7] {
        [
            &mut self.and,
            &mut self.write_back,
            &mut self.cmp,
            &mut self.shift,
            &mut self.accumulate,
            &mut self.nv_checkpoint,
            &mut self.epu,
        ]
    }

    fn add(&mut self, o: &Phases) {
        for (a, (_, b)) in self.entries_mut().into_iter().zip(o.entries()) {
            a.add(b);
        }
    }

    pub fn total_cycles(&self) -> u64 {
        self.entries().iter().map(|(_, p)| p.cycles).sum()
    }

    pub fn total_energy(&self) -> f64 {
        self.entries().iter().map(|(_, p)| p.energy_pj).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub cycles: u64,
    pub latency_ns: f64,
    pub energy_pj: f64,
    pub phases: Phases,
    pub popcounts: u64,
    /// Filled by [`CostReport::finalize_throughput`].
    pub frames_per_sec: f64,
    pub storage_bytes: u64,
}

impl CostReport {
    fn from_phases(phases: Phases, popcounts: u64, params: &CostParams) -> Self {
        let cycles = phases.total_cycles();
        Self {
            cycles,
            latency_ns: cycles as f64 * params.t_cycle_ns,
            energy_pj: phases.total_energy(),
            phases,
            popcounts,
            frames_per_sec: 0.0,
            storage_bytes: 0,
        }
    }

    pub fn merge(&mut self, o: &CostReport) {
        self.cycles += o.cycles;
        self.latency_ns += o.latency_ns;
        self.energy_pj += o.energy_pj;
        self.phases.add(&o.phases);
        self.popcounts += o.popcounts;
        self.storage_bytes = self.storage_bytes.max(o.storage_bytes);
    }

    pub fn finalize_throughput(&mut self, batch: usize, params: &CostParams) -> Result<()> {
        self.frames_per_sec = throughput(self, batch, params.area_units)?;
        Ok(())
    }

    /// Checks that the phase breakdown sums to the totals and nothing is non-finite.
    pub fn check_consistency(&self) -> Result<()> {
        if self.phases.total_cycles() != self.cycles {
            return Err(Error::Numeric(format!(
                "phase cycles sum to {} but total is {}",
                self.phases.total_cycles(),
                self.cycles
            )));
        }
        let e = self.phases.total_energy();
        if (e - self.energy_pj).abs() > 1e-9 * self.energy_pj.abs().max(1.0) {
            return Err(Error::Numeric(format!(
                "phase energy sums to {e} but total is {}",
                self.energy_pj
            )));
        }
        let finite = [self.latency_ns, self.energy_pj, self.frames_per_sec]
            .iter()
            .chain(self.phases.entries().iter().map(|(_, p)| &p.energy_pj))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric("non-finite value in cost report".into()));
        }
        Ok(())
    }
}

/// Phase costs of a single unit over a tile of `len` columns.
fn unit_phases(len: usize, layer: &ConvLayerSpec, count_width: u32, params: &CostParams) -> Phases {
    if len == 0 {
        return Phases::default();
    }
    let n = u64::from(layer.weight_bits);
    let m = u64::from(layer.input_bits);
    let ops = n * m;
    let ops_f = ops as f64;
    let ffs = f64::from(count_width + layer.max_shift());
    Phases {
        and: PhaseCost {
            cycles: (n + m) + ops,
            energy_pj: (n + m) as f64 * params.e_write_pj + ops_f * params.e_and_pj,
        },
        write_back: PhaseCost {
            cycles: ops,
            energy_pj: ops_f * params.e_write_pj,
        },
        cmp: PhaseCost {
            cycles: ops * popcount_cycles(len, params),
            energy_pj: ops_f * (params.e_read_pj + popcount_energy(len, params)),
        },
        shift: PhaseCost {
            cycles: ops,
            energy_pj: ops_f * ffs * params.e_shift_pj,
        },
        accumulate: PhaseCost {
            cycles: ops * params.fa_cycles(),
            energy_pj: ops_f * f64::from(params.accumulator_width) * params.e_fa_pj,
        },
        nv_checkpoint: PhaseCost::default(),
        epu: PhaseCost::default(),
    }
}

fn count_width(plan: &MappingPlan) -> u32 {
    usize::BITS - plan.hierarchy.cols_per_mat.leading_zeros()
}

/// Checkpoint cost for one batch item of a stage with `positions` frames
/// producing `per_frame` accumulators each. Accumulators sit in different
/// mats, so each mat writes one accumulator's cells per two cycles.
fn stage_checkpoints(positions: usize, per_frame: usize, mats: usize, params: &CostParams) -> PhaseCost {
    let k = params.checkpoint_interval as usize;
    let count = positions.div_ceil(k);
    let cycles = (0..count)
        .map(|c| {
            let frames = k.min(positions - c * k);
            2 * (frames * per_frame).div_ceil(mats) as u64 + 2
        })
        .sum();
    let accs = positions * per_frame;
    PhaseCost {
        cycles,
        energy_pj: (accs as u64 * params.nv_bits_per_accumulator() + count as u64) as f64 * params.e_nv_write_pj,
    }
}

/// Cost of a mapped quantized layer.
pub fn layer_cost(plan: &MappingPlan, layer: &ConvLayerSpec, params: &CostParams) -> Result<CostReport> {
    if plan.units() == 0 {
        return Ok(CostReport::default());
    }
    let cw = count_width(plan);
    let first = plan.tile_columns(0).len();
    let last = plan.tile_columns(plan.tiles - 1).len();
    // the first tile is the widest, so it is also the critical unit
    let full = unit_phases(first, layer, cw, params);
    let tail = unit_phases(last, layer, cw, params);
    let rounds = plan.rounds() as u64;
    let elements = plan.output_elements() as f64;
    let full_tiles = (plan.tiles - 1) as f64;

    let mut phases = Phases::default();
    for (dst, ((_, f), (_, t))) in phases
        .entries_mut()
        .into_iter()
        .zip(full.entries().into_iter().zip(tail.entries()))
    {
        *dst = PhaseCost {
            cycles: f.cycles * rounds,
            energy_pj: elements * (full_tiles * f.energy_pj + t.energy_pj),
        };
    }
    phases.nv_checkpoint = stage_checkpoints(plan.positions(), plan.out_channels, plan.hierarchy.total_mats(), params)
        .scaled(plan.batch as u64, plan.batch as f64);
    let popcounts = plan.units() as u64 * u64::from(layer.weight_bits * layer.input_bits);
    Ok(CostReport::from_phases(phases, popcounts, params))
}

/// Cycles of one frame (all output channels at one position) when frames run
/// one after another, as under intermittent power.
pub fn frame_cycles(plan: &MappingPlan, layer: &ConvLayerSpec, params: &CostParams) -> u64 {
    let per_frame_units = plan.out_channels * plan.tiles;
    let rounds = per_frame_units.div_ceil(plan.hierarchy.total_mats()) as u64;
    let first = plan.tile_columns(0).len();
    rounds * unit_phases(first, layer, count_width(plan), params).total_cycles()
}

/// Cost of `ops` EPU element operations.
pub fn epu_cost(ops: u64, params: &CostParams) -> CostReport {
    let phases = Phases {
        epu: PhaseCost {
            cycles: ops.div_ceil(params.epu_lanes as u64),
            energy_pj: ops as f64 * params.e_epu_pj,
        },
        ..Default::default()
    };
    CostReport::from_phases(phases, 0, params)
}

/// Frames per second per area unit: `batch / latency / area`.
pub fn throughput(report: &CostReport, batch: usize, area_units: f64) -> Result<f64> {
    if report.latency_ns.is_nan() || report.latency_ns <= 0.0 {
        return Err(Error::Numeric("throughput of a zero-latency report".into()));
    }
    if area_units.is_nan() || area_units <= 0.0 {
        return Err(Error::Numeric(format!("area units {area_units} must be positive")));
    }
    Ok(batch as f64 / (report.latency_ns * 1e-9) / area_units)
}

/// Relative computation complexity `(w*i, w*i + w*g)` for inference and training.
pub fn complexity_index(w_bits: u32, i_bits: u32, g_bits: u32) -> Result<(u64, u64)> {
    if w_bits == 0 || i_bits == 0 || g_bits == 0 {
        return Err(Error::Parameter("bit-widths must be >= 1".into()));
    }
    let (w, i, g) = (u64::from(w_bits), u64::from(i_bits), u64::from(g_bits));
    Ok((w * i, w * i + w * g))
}

/// Geometry of one layer for storage accounting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageLayer {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub groups: usize,
    /// Output spatial size.
    pub out_hw: [usize; 2],
}

impl StorageLayer {
    pub fn conv(name: &str, cin: usize, cout: usize, k: usize, groups: usize, out: usize) -> Self {
        Self {
            name: name.into(),
            in_channels: cin,
            out_channels: cout,
            kernel: [k, k],
            groups,
            out_hw: [out, out],
        }
    }

    pub fn fc(name: &str, inputs: usize, outputs: usize) -> Self {
        Self::conv(name, inputs, outputs, 1, 1, 1)
    }

    pub fn params(&self) -> u64 {
        (self.out_channels * (self.in_channels / self.groups) * self.kernel[0] * self.kernel[1]) as u64
    }

    /// Elements of the expanded receptive-field buffer, one row per output position.
    pub fn mapped_input_elems(&self) -> u64 {
        (self.out_hw[0] * self.out_hw[1] * self.kernel[0] * self.kernel[1] * self.in_channels) as u64
    }

    pub fn output_elems(&self) -> u64 {
        (self.out_hw[0] * self.out_hw[1] * self.out_channels) as u64
    }
}

/// The eight-layer ImageNet network with grouped convolutions (about 61M parameters).
pub fn alexnet_layers() -> Vec<StorageLayer> {
    vec![
        StorageLayer::conv("conv1", 3, 96, 11, 1, 55),
        StorageLayer::conv("conv2", 96, 256, 5, 2, 27),
        StorageLayer::conv("conv3", 256, 384, 3, 1, 13),
        StorageLayer::conv("conv4", 384, 384, 3, 2, 13),
        StorageLayer::conv("conv5", 384, 256, 3, 2, 13),
        StorageLayer::fc("fc6", 9216, 4096),
        StorageLayer::fc("fc7", 4096, 4096),
        StorageLayer::fc("fc8", 4096, 1000),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub w_bits: u32,
    pub i_bits: u32,
    pub unquantized_first_last: bool,
    pub weight_bytes: u64,
    pub activation_bytes: u64,
    pub total_bytes: u64,
    /// Layer whose buffers set the activation peak.
    pub peak_layer: String,
    pub assumptions: Vec<String>,
}

impl StorageReport {
    pub fn total_mb(&self) -> f64 {
        self.total_bytes as f64 / 1e6
    }
}

impl fmt::Display for StorageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "storage W:I = {}:{} (first/last full precision: {})",
            self.w_bits, self.i_bits, self.unquantized_first_last
        )?;
        writeln!(f, "  weights      {:>14} B", self.weight_bytes)?;
        writeln!(f, "  activations  {:>14} B  (peak at {})", self.activation_bytes, self.peak_layer)?;
        writeln!(f, "  total        {:>14} B  ({:.2} MB)", self.total_bytes, self.total_mb())?;
        writeln!(f, "  assumptions:")?;
        for a in &self.assumptions {
            writeln!(f, "    - {a}")?;
        }
        Ok(())
    }
}

fn bytes(elems: u64, bits: u32) -> u64 {
    (u128::from(elems) * u128::from(bits)).div_ceil(8) as u64
}

/// Weight and activation storage for a layer list.
pub fn storage_footprint(layers: &[StorageLayer], w_bits: u32, i_bits: u32, unquantized_first_last: bool) -> Result<StorageReport> {
    if w_bits == 0 || i_bits == 0 {
        return Err(Error::Parameter("bit-widths must be >= 1".into()));
    }
    if let Some(l) = layers.iter().find(|l| l.groups == 0 || l.in_channels % l.groups != 0) {
        return Err(Error::Parameter(format!("layer {} has invalid grouping", l.name)));
    }
    let last = layers.len().saturating_sub(1);
    let full = |i: usize, bits: u32| {
        if unquantized_first_last && (i == 0 || i == last) {
            bits.max(32)
        } else {
            bits
        }
    };
    let weight_bytes = layers
        .iter()
        .enumerate()
        .map(|(i, l)| bytes(l.params(), full(i, w_bits)))
        .sum();
    let mut activation_bytes = 0;
    let mut peak_layer = String::new();
    for (i, l) in layers.iter().enumerate() {
        let in_bits = if unquantized_first_last && i == 0 { i_bits.max(32) } else { i_bits };
        let out_bits = if unquantized_first_last && i == last { i_bits.max(32) } else { i_bits };
        let live = bytes(l.mapped_input_elems(), in_bits) + bytes(l.output_elems(), out_bits);
        if live > activation_bytes {
            activation_bytes = live;
            peak_layer = l.name.clone();
        }
    }
    let mut assumptions = vec![
        format!("weights stored at {w_bits} bits, no biases"),
        "activation peak = expanded receptive-field input buffer (one row per output position, as mapped into the arrays) plus the output buffer of the same layer".to_string(),
        format!("activations stored at {i_bits} bits"),
        "1 MB = 10^6 bytes".to_string(),
    ];
    if unquantized_first_last {
        assumptions.push(
            "first and last layer weights, the network input and the final scores kept at max(32, bits) bits".to_string(),
        );
    }
    Ok(StorageReport {
        w_bits,
        i_bits,
        unquantized_first_last,
        weight_bytes,
        activation_bytes,
        total_bytes: weight_bytes + activation_bytes,
        peak_layer,
        assumptions,
    })
}
