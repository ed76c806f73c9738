//! TOML configuration.
//!
//! A run config names a model file and carries simulator parameters:
//!
//! ```toml
//! seed = 7
//! model = "models/sample_net.toml"   # relative to this file
//! samples = 4                        # random inputs when `input` is absent
//! # input = "input.pimq"             # optional [C, H, W] tensor
//!
//! [device]        # sense-amplifier Monte Carlo parameters
//! [cost]          # cost model parameters
//! [hierarchy]     # memory organization
//! [intermittency] # checkpoint_k, nv_mode, traces, trace generator
//! [monte_carlo]   # trials
//! [sweep]         # sweep points
//! [output]        # dir, format
//! ```
//!
//! A model file lists layers in order:
//!
//! ```toml
//! name = "tiny"
//! input_shape = [1, 8, 8]
//!
//! [[layers]]
//! kind = "conv"
//! out_channels = 4
//! kernel = [3, 3]
//! padding = 1
//! weight_bits = 2
//! input_bits = 2
//! activation = "half_tanh"
//! bn = { mean = 0.5, var = 0.25, gamma = 1.0, beta = 0.0 }
//! # weights = "conv1.pimq"   # optional, else uniform random from the seed
//!
//! [[layers]]
//! kind = "avgpool"     # attaches to the preceding conv or fc layer
//! window = 2
//! stride = 2
//!
//! [[layers]]
//! kind = "fc"
//! out_features = 10
//! quantize = false
//! ```
//!
//! Unknown keys are rejected everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accumulator::NvMode;
use crate::bitplane::{dequantize, read_pimq};
use crate::costmodel::CostParams;
use crate::engine::{Activation, BatchNorm, ComputeLayer, ConvLayerSpec, MemoryHierarchy, Network, Padding, Pool};
use crate::error::{Error, Result};
use crate::intermittency::PowerTrace;
use crate::subarray::DeviceParams;
use crate::tensor::RealTensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            format: OutputFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    #[default]
    Exponential,
    Periodic,
    AlwaysOn,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntermittencyConfig {
    pub checkpoint_k: u32,
    pub nv_mode: NvMode,
    /// Number of seeded traces per experiment.
    pub traces: usize,
    pub trace: TraceKind,
    pub mean_on: f64,
    pub mean_off: f64,
    pub on: u64,
    pub off: u64,
    /// `on,off` CSV for `trace = "file"`, relative to the config file.
    pub file: Option<PathBuf>,
    pub max_intervals: u64,
}

impl Default for IntermittencyConfig {
    fn default() -> Self {
        Self {
            checkpoint_k: 20,
            nv_mode: NvMode::TwoFf,
            traces: 100,
            trace: TraceKind::Exponential,
            mean_on: 1e6,
            mean_off: 1e3,
            on: 1_000_000,
            off: 1_000,
            file: None,
            max_intervals: 1_000_000,
        }
    }
}

impl IntermittencyConfig {
    /// Trace number `index` of an experiment seeded with `seed`.
    pub fn trace(&self, seed: u64, index: usize, base_dir: &Path) -> Result<PowerTrace> {
        match self.trace {
            TraceKind::Exponential => {
                PowerTrace::exponential(seed.wrapping_add(index as u64), self.mean_on, self.mean_off)
            }
            TraceKind::Periodic => PowerTrace::periodic(self.on, self.off),
            TraceKind::AlwaysOn => Ok(PowerTrace::always_on()),
            TraceKind::File => {
                let path = self
                    .file
                    .as_ref()
                    .ok_or_else(|| Error::Config("intermittency.file is required for trace = \"file\"".into()))?;
                let path = base_dir.join(path);
                let text = fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("cannot read trace {}: {e}", path.display())))?;
                PowerTrace::from_csv(&text)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub trials: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { trials: 100_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// `[w_bits, i_bits]` pairs.
    pub bitwidths: Vec<[u32; 2]>,
    pub g_bits: u32,
    pub checkpoint_k: Vec<u32>,
    pub sigma_ra: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            bitwidths: vec![[1, 1], [1, 4], [1, 8], [2, 2]],
            g_bits: 8,
            checkpoint_k: vec![1, 5, 20, 50],
            sigma_ra: vec![0.0, 0.05, 0.10, 0.15],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: PathBuf,
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default = "one")]
    pub samples: usize,
    #[serde(default)]
    pub device: DeviceParams,
    #[serde(default)]
    pub cost: CostParams,
    #[serde(default)]
    pub hierarchy: MemoryHierarchy,
    #[serde(default)]
    pub intermittency: IntermittencyConfig,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory relative paths resolve against; set by [`SimConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn one() -> usize {
    1
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

impl SimConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.base_dir = base_dir.to_path_buf();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&read(path)?, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.device.validate().map_err(|e| Error::Config(format!("[device] {e}")))?;
        self.cost.validate()?;
        self.hierarchy.validate()?;
        if self.samples == 0 {
            return Err(Error::Config("samples must be >= 1".into()));
        }
        if self.intermittency.checkpoint_k == 0 {
            return Err(Error::Config("intermittency.checkpoint_k must be >= 1".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn load_model(&self) -> Result<(ModelConfig, Network)> {
        let path = self.resolve(&self.model);
        let model = ModelConfig::load(&path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let net = model.build(base, self.seed)?;
        Ok((model, net))
    }

    /// The configured input tensor, or `samples` uniform random inputs.
    pub fn inputs(&self, net: &Network) -> Result<Vec<RealTensor>> {
        if let Some(p) = &self.input {
            let path = self.resolve(p);
            let q = read_pimq(fs::File::open(&path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?)?;
            let t = dequantize(&q);
            if t.shape() != net.input_shape() {
                return Err(Error::Shape(format!(
                    "input {} has shape {:?}, model expects {:?}",
                    path.display(),
                    t.shape(),
                    net.input_shape()
                )));
            }
            return Ok(vec![t]);
        }
        Ok(random_inputs(net.input_shape(), self.samples, self.seed))
    }
}

/// Uniform `[0, 1)` inputs drawn from a seed.
pub fn random_inputs(shape: [usize; 3], count: usize, seed: u64) -> Vec<RealTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a2b_3c4d);
    let n: usize = shape.iter().product();
    (0..count)
        .map(|_| {
            RealTensor::new(shape.to_vec(), (0..n).map(|_| rng.random::<f64>()).collect()).expect("sized")
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvConfig {
    pub name: Option<String>,
    pub out_channels: usize,
    pub kernel: [usize; 2],
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default = "default_bits")]
    pub weight_bits: u32,
    #[serde(default = "default_bits")]
    pub input_bits: u32,
    #[serde(default = "yes")]
    pub quantize: bool,
    pub activation: Option<Activation>,
    pub bn: Option<BatchNorm>,
    pub weights: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcConfig {
    pub name: Option<String>,
    pub out_features: usize,
    #[serde(default = "default_bits")]
    pub weight_bits: u32,
    #[serde(default = "default_bits")]
    pub input_bits: u32,
    #[serde(default = "yes")]
    pub quantize: bool,
    pub activation: Option<Activation>,
    pub bn: Option<BatchNorm>,
    pub weights: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub window: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerConfig {
    Conv(ConvConfig),
    Fc(FcConfig),
    Avgpool(PoolConfig),
}

fn default_bits() -> u32 {
    32
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    /// Marks layer dimensions that were reconstructed rather than published.
    #[serde(default)]
    pub reconstruction: bool,
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerConfig>,
}

impl ModelConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read(path)?).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Builds the network; layers without a weight file get uniform `[0, 1)`
    /// weights drawn from `seed` in layer order.
    pub fn build(&self, base_dir: &Path, seed: u64) -> Result<Network> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers: Vec<ComputeLayer> = Vec::new();
        let mut shape = self.input_shape;
        for (i, lc) in self.layers.iter().enumerate() {
            let (spec, name, act, bn, wpath, flatten) = match lc {
                LayerConfig::Avgpool(p) => {
                    let pool = Pool {
                        window: p.window,
                        stride: p.stride,
                    };
                    let prev = layers
                        .last_mut()
                        .ok_or_else(|| Error::Config(format!("layer {i}: avgpool must follow a conv or fc layer")))?;
                    if prev.pool.is_some() {
                        return Err(Error::Config(format!("layer {i}: two pooling layers in a row")));
                    }
                    let (h, w) = pool.output_dims(shape[1], shape[2]).map_err(|e| Error::Config(format!("layer {i}: {e}")))?;
                    prev.pool = Some(pool);
                    shape = [shape[0], h, w];
                    continue;
                }
                LayerConfig::Conv(c) => {
                    let mut spec = ConvLayerSpec::new((c.kernel[0], c.kernel[1]), shape[0], c.out_channels, (c.weight_bits, c.input_bits));
                    spec.stride = c.stride;
                    spec.padding = if c.padding == 0 { Padding::None } else { Padding::Zero(c.padding) };
                    spec.quantize = c.quantize;
                    (spec, c.name.clone(), c.activation, c.bn, c.weights.clone(), false)
                }
                LayerConfig::Fc(f) => {
                    let mut spec = ConvLayerSpec::new((1, 1), shape.iter().product(), f.out_features, (f.weight_bits, f.input_bits));
                    spec.quantize = f.quantize;
                    (spec, f.name.clone(), f.activation, f.bn, f.weights.clone(), true)
                }
            };
            let wshape = vec![spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w];
            let weights = match wpath {
                Some(p) => {
                    let path = base_dir.join(p);
                    let file = fs::File::open(&path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
                    let t = dequantize(&read_pimq(file)?);
                    t.reshaped(wshape)?
                }
                None => {
                    let n: usize = wshape.iter().product();
                    RealTensor::new(wshape, (0..n).map(|_| rng.random::<f64>()).collect())?
                }
            };
            let input_hw = if flatten { (1, 1) } else { (shape[1], shape[2]) };
            let (oh, ow) = spec.output_dims(input_hw.0, input_hw.1).map_err(|e| Error::Config(format!("layer {i}: {e}")))?;
            shape = [spec.out_channels, oh, ow];
            layers.push(ComputeLayer {
                name: name.unwrap_or_else(|| format!("layer{}", layers.len())),
                spec,
                weights,
                flatten,
                bn,
                activation: act,
                pool: None,
            });
        }
        Network::new(self.input_shape, layers)
    }
}
