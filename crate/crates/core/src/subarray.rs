//! Functional model of one SOT-MRAM computational sub-array.
//!
//! Cells hold 0 (parallel, low resistance) or 1 (anti-parallel, high
//! resistance). Activating two word lines of one column puts both cells'
//! read paths in parallel; the sense amplifier compares the resulting bit-line
//! current against one of three references, which turns a read into AND or
//! OR. XOR is NOR(AND, NOR) over two references sensed in the same step.
//!
//! Functional compute here is ideal. Resistance variation is only modelled in
//! [`sense_margin_mc`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bits::BitVector;
use crate::error::{Error, Result};

pub const DEFAULT_ROWS: usize = 256;
pub const DEFAULT_COLS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SenseMode {
    And,
    Or,
    Xor,
    Read,
}

impl SenseMode {
    pub const ALL: [SenseMode; 4] = [SenseMode::And, SenseMode::Or, SenseMode::Xor, SenseMode::Read];

    pub fn label(self) -> &'static str {
        match self {
            SenseMode::And => "AND",
            SenseMode::Or => "OR",
            SenseMode::Xor => "XOR",
            SenseMode::Read => "READ",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubArray {
    rows: usize,
    cols: usize,
    cells: Vec<BitVector>,
}

impl Default for SubArray {
    fn default() -> Self {
        Self::new(DEFAULT_ROWS, DEFAULT_COLS)
    }
}

impl SubArray {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![BitVector::zeros(cols); rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn check_row(&self, row: usize) -> Result<()> {
        if row >= self.rows {
            return Err(Error::Bounds {
                what: "row",
                index: row,
                limit: self.rows,
            });
        }
        Ok(())
    }

    pub fn write_row(&mut self, row: usize, bits: &BitVector) -> Result<()> {
        self.check_row(row)?;
        if bits.len() != self.cols {
            return Err(Error::Bounds {
                what: "row width",
                index: bits.len(),
                limit: self.cols,
            });
        }
        self.cells[row].clone_from(bits);
        Ok(())
    }

    pub fn read_row(&self, row: usize) -> Result<BitVector> {
        self.check_row(row)?;
        Ok(self.cells[row].clone())
    }

    /// Two-row bitwise compute across every column in one array cycle.
    ///
    /// The array is only sensed; callers write the result back explicitly.
    pub fn compute_rows(&self, row_a: usize, row_b: usize, mode: SenseMode) -> Result<BitVector> {
        self.check_row(row_a)?;
        self.check_row(row_b)?;
        if row_a == row_b {
            return Err(Error::InvalidOperand(format!(
                "compute needs two distinct word lines, got row {row_a} twice"
            )));
        }
        let (a, b) = (&self.cells[row_a], &self.cells[row_b]);
        match mode {
            SenseMode::And => Ok(a.and(b)),
            SenseMode::Or => Ok(a.or(b)),
            SenseMode::Xor => Ok(a.and(b).nor(&a.nor(b))),
            SenseMode::Read => Err(Error::InvalidOperand(
                "READ senses a single row; use read_row".into(),
            )),
        }
    }
}

/// Electrical parameters of a cell and its read path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParams {
    /// Parallel-state resistance, ohms.
    pub r_low: f64,
    /// Anti-parallel-state resistance, ohms.
    pub r_high: f64,
    /// Relative std-dev of the resistance-area product, applied to `r_low`.
    pub sigma_ra: f64,
    /// Relative std-dev of the TMR, applied to `r_high - r_low`.
    pub sigma_tmr: f64,
    /// Series access-transistor (and heavy-metal) resistance per path, ohms.
    pub r_access: f64,
    /// Read bias voltage, volts.
    pub v_bias: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            r_low: 3_000.0,
            r_high: 6_000.0,
            sigma_ra: 0.05,
            sigma_tmr: 0.10,
            r_access: 1_000.0,
            v_bias: 0.1,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("r_low", self.r_low),
            ("r_high", self.r_high),
            ("sigma_ra", self.sigma_ra),
            ("sigma_tmr", self.sigma_tmr),
            ("r_access", self.r_access),
            ("v_bias", self.v_bias),
        ];
        if let Some((name, v)) = all.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Parameter(format!("{name} = {v} is not finite")));
        }
        if !(self.r_low > 0.0 && self.r_low < self.r_high) {
            return Err(Error::Parameter(format!(
                "need 0 < r_low < r_high, got {} and {}",
                self.r_low, self.r_high
            )));
        }
        if self.sigma_ra < 0.0 || self.sigma_tmr < 0.0 {
            return Err(Error::Parameter("sigmas must be nonnegative".into()));
        }
        if self.r_access < 0.0 || self.v_bias <= 0.0 {
            return Err(Error::Parameter(
                "r_access must be >= 0 and v_bias > 0".into(),
            ));
        }
        Ok(())
    }

    /// Bit-line current in microamps for one or two cells in parallel.
    fn sense_level(&self, cells: &[f64]) -> f64 {
        let conductance: f64 = cells.iter().map(|r| 1.0 / (r + self.r_access)).sum();
        self.v_bias * conductance * 1e6
    }

    /// Ideal sense levels of the two-cell states 00, 01, 11.
    pub fn two_cell_levels(&self) -> [f64; 3] {
        let (lo, hi) = (self.r_low, self.r_high);
        [
            self.sense_level(&[lo, lo]),
            self.sense_level(&[lo, hi]),
            self.sense_level(&[hi, hi]),
        ]
    }

    /// Sense-amplifier references at the midpoints between adjacent ideal levels.
    pub fn references(&self) -> SenseReferences {
        let [l00, l01, l11] = self.two_cell_levels();
        let p = self.sense_level(&[self.r_low]);
        let ap = self.sense_level(&[self.r_high]);
        SenseReferences {
            or: (l00 + l01) / 2.0,
            and: (l01 + l11) / 2.0,
            read: (p + ap) / 2.0,
        }
    }
}

/// Reference currents (µA). A lower current means more high-resistance
/// cells, so each comparison outputs 1 when the level is below its reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SenseReferences {
    pub and: f64,
    pub or: f64,
    pub read: f64,
}

impl SenseReferences {
    /// Equivalent path resistance at which each reference trips, ohms.
    pub fn as_resistance(&self, params: &DeviceParams) -> (f64, f64, f64) {
        let r = |i: f64| params.v_bias * 1e6 / i;
        (r(self.and), r(self.or), r(self.read))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateStats {
    /// `"00"`, `"01"`, `"11"` for two-cell compute, `"0"`, `"1"` for single-cell read.
    pub state: String,
    pub mean: f64,
    pub std: f64,
    pub misclass_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub mode: SenseMode,
    pub misclass_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub trials: usize,
    pub seed: u64,
    pub references: SenseReferences,
    pub states: Vec<StateStats>,
    pub modes: Vec<ModeStats>,
}

impl MarginReport {
    pub fn mode_rate(&self, mode: SenseMode) -> f64 {
        self.modes
            .iter()
            .find(|m| m.mode == mode)
            .map(|m| m.misclass_rate)
            .unwrap_or(0.0)
    }

    /// `state,mean,std,misclass_rate`; per-mode rates follow as rows whose
    /// state column is `mode:<NAME>` and whose mean/std are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,mean,std,misclass_rate\n");
        for s in &self.states {
            out.push_str(&format!("{},{},{},{}\n", s.state, s.mean, s.std, s.misclass_rate));
        }
        for m in &self.modes {
            out.push_str(&format!("mode:{},,,{}\n", m.mode.label(), m.misclass_rate));
        }
        out
    }
}

#[derive(Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
    wrong: u64,
}

impl Welford {
    fn push(&mut self, x: f64, wrong: bool) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
        self.wrong += u64::from(wrong);
    }

    fn stats(&self, state: &str) -> StateStats {
        let std = if self.n > 1 {
            (self.m2 / (self.n - 1) as f64).sqrt()
        } else {
            0.0
        };
        StateStats {
            state: state.to_string(),
            mean: self.mean,
            std,
            misclass_rate: self.wrong as f64 / self.n.max(1) as f64,
        }
    }
}

/// Monte-Carlo sense-margin experiment.
///
/// Each sampled cell has `R_P = r_low * (1 + sigma_ra * z1)` and, when
/// anti-parallel, `R_AP = R_P + (r_high - r_low) * (1 + sigma_tmr * z2)`
/// with independent standard normals `z1`, `z2`. Both normals are drawn for
/// every cell regardless of the sigmas, so sweeping a sigma at a fixed seed
/// reuses the same draws.
pub fn sense_margin_mc(params: &DeviceParams, trials: usize, seed: u64) -> Result<MarginReport> {
    params.validate()?;
    if trials == 0 {
        return Err(Error::Parameter("trials must be at least 1".into()));
    }
    let refs = params.references();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = |high: bool, rng: &mut ChaCha8Rng| -> f64 {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let rp = params.r_low * (1.0 + params.sigma_ra * z1);
        let r = if high {
            rp + (params.r_high - params.r_low) * (1.0 + params.sigma_tmr * z2)
        } else {
            rp
        };
        r.max(1e-3)
    };

    let two_cell = [(false, false), (false, true), (true, true)];
    let mut state_acc: [Welford; 3] = Default::default();
    let mut read_acc: [Welford; 2] = Default::default();
    let (mut and_wrong, mut or_wrong, mut xor_wrong, mut read_wrong) = (0u64, 0u64, 0u64, 0u64);

    for _ in 0..trials {
        for (idx, &(a, b)) in two_cell.iter().enumerate() {
            let ra = sample(a, &mut rng);
            let rb = sample(b, &mut rng);
            let level = params.sense_level(&[ra, rb]);
            let and_bit = level < refs.and;
            let or_bit = level < refs.or;
            // XOR = NOR(AND, NOR)
            let xor_bit = !(and_bit || !or_bit);
            and_wrong += u64::from(and_bit != (a && b));
            or_wrong += u64::from(or_bit != (a || b));
            xor_wrong += u64::from(xor_bit != (a ^ b));
            let sensed = match (or_bit, and_bit) {
                (false, false) => Some(0),
                (true, false) => Some(1),
                (true, true) => Some(2),
                (false, true) => None,
            };
            state_acc[idx].push(level, sensed != Some(idx));
        }
        for (idx, high) in [false, true].into_iter().enumerate() {
            let r = sample(high, &mut rng);
            let level = params.sense_level(&[r]);
            let bit = level < refs.read;
            read_wrong += u64::from(bit != high);
            read_acc[idx].push(level, bit != high);
        }
    }

    let two_total = (trials * 3) as f64;
    let states = ["00", "01", "11"]
        .iter()
        .zip(&state_acc)
        .map(|(s, w)| w.stats(s))
        .chain(["0", "1"].iter().zip(&read_acc).map(|(s, w)| w.stats(s)))
        .collect();
    let modes = vec![
        ModeStats {
            mode: SenseMode::And,
            misclass_rate: and_wrong as f64 / two_total,
        },
        ModeStats {
            mode: SenseMode::Or,
            misclass_rate: or_wrong as f64 / two_total,
        },
        ModeStats {
            mode: SenseMode::Xor,
            misclass_rate: xor_wrong as f64 / two_total,
        },
        ModeStats {
            mode: SenseMode::Read,
            misclass_rate: read_wrong as f64 / (trials * 2) as f64,
        },
    ];
    Ok(MarginReport {
        trials,
        seed,
        references: refs,
        states,
        modes,
    })
}
