use serde::{Deserialize, Serialize};

use super::conv::BitwiseConv;
use super::epu::{conv_real, epu_activation, epu_avgpool, epu_batchnorm, Activation, BatchNorm, Pool};
use super::hierarchy::MemoryHierarchy;
use super::layer::ConvLayerSpec;
use crate::accumulator::{AccumulatorConfig, NvAccumulatorState};
use crate::bitplane::{max_level, quantize, QuantizedTensor};
use crate::costmodel::{epu_cost, layer_cost, CostParams, CostReport};
use crate::error::{Error, Result};
use crate::tensor::{IntTensor, RealTensor};

/// A convolution (or fully connected) layer with its EPU post-processing.
/// Post-processing runs batch norm, then activation, then pooling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComputeLayer {
    pub name: String,
    pub spec: ConvLayerSpec,
    /// Real weights `[K, C, kh, kw]`; quantized layers need them in `[0, 1]`.
    pub weights: RealTensor,
    /// Flatten the incoming `[C, H, W]` map to `[C*H*W, 1, 1]` first (FC layers).
    pub flatten: bool,
    pub bn: Option<BatchNorm>,
    pub activation: Option<Activation>,
    pub pool: Option<Pool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StageShape {
    /// Input shape after any flattening.
    pub input: [usize; 3],
    pub conv_out: [usize; 3],
    pub output: [usize; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_shape: [usize; 3],
    layers: Vec<ComputeLayer>,
    shapes: Vec<StageShape>,
    qweights: Vec<Option<QuantizedTensor>>,
}

impl Network {
    pub fn new(input_shape: [usize; 3], layers: Vec<ComputeLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Structural("network has no layers".into()));
        }
        let mut shape = input_shape;
        let mut shapes = Vec::with_capacity(layers.len());
        let mut qweights = Vec::with_capacity(layers.len());
        let mut prev_activation = true;
        for (i, layer) in layers.iter().enumerate() {
            let ctx = |e: Error| Error::Structural(format!("layer {i} ({}): {e}", layer.name));
            let spec = &layer.spec;
            spec.validate().map_err(ctx)?;
            let input = if layer.flatten {
                if spec.kernel_h != 1 || spec.kernel_w != 1 {
                    return Err(ctx(Error::Shape("flattened layers use a 1x1 kernel".into())));
                }
                [shape.iter().product(), 1, 1]
            } else {
                shape
            };
            if input[0] != spec.in_channels {
                return Err(ctx(Error::Shape(format!(
                    "expects {} input channels, receives {}",
                    spec.in_channels, input[0]
                ))));
            }
            let expected_w = [spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w];
            if layer.weights.shape() != expected_w {
                return Err(ctx(Error::Shape(format!(
                    "weights have shape {:?}, expected {expected_w:?}",
                    layer.weights.shape()
                ))));
            }
            if spec.quantize && !prev_activation {
                return Err(ctx(Error::Structural(
                    "a quantized layer must follow an activation so its input lies in [0, 1]".into(),
                )));
            }
            if let Some(bn) = &layer.bn {
                bn.validate().map_err(ctx)?;
            }
            let (oh, ow) = spec.output_dims(input[1], input[2]).map_err(ctx)?;
            let conv_out = [spec.out_channels, oh, ow];
            let output = match layer.pool {
                Some(p) => {
                    let (ph, pw) = p.output_dims(oh, ow).map_err(ctx)?;
                    [spec.out_channels, ph, pw]
                }
                None => conv_out,
            };
            qweights.push(if spec.quantize {
                Some(quantize(&layer.weights, spec.weight_bits).map_err(ctx)?)
            } else {
                None
            });
            shapes.push(StageShape { input, conv_out, output });
            shape = output;
            prev_activation = layer.activation.is_some();
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
            qweights,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.shapes.last().expect("nonempty").output
    }

    pub fn layers(&self) -> &[ComputeLayer] {
        &self.layers
    }

    pub fn shapes(&self) -> &[StageShape] {
        &self.shapes
    }

    pub fn quantized_weights(&self, stage: usize) -> Option<&QuantizedTensor> {
        self.qweights[stage].as_ref()
    }

    pub fn frames(&self, stage: usize) -> usize {
        let s = self.shapes[stage].conv_out;
        s[1] * s[2]
    }

    pub fn total_frames(&self) -> u64 {
        (0..self.layers.len()).map(|i| self.frames(i) as u64).sum()
    }

    /// Reshapes a stage's incoming map to its conv input shape.
    pub fn stage_input(&self, stage: usize, x: &RealTensor) -> Result<RealTensor> {
        let expected = if stage == 0 {
            self.input_shape
        } else {
            self.shapes[stage - 1].output
        };
        if x.shape() != expected {
            return Err(Error::Shape(format!(
                "stage {stage} expects input {expected:?}, got {:?}",
                x.shape()
            )));
        }
        x.clone().reshaped(self.shapes[stage].input.to_vec())
    }

    /// Real value of integer conv outputs, `v / ((2^m - 1)(2^n - 1))`.
    pub fn dequantize_output(&self, stage: usize, ints: &IntTensor) -> RealTensor {
        let spec = &self.layers[stage].spec;
        let denom = (max_level(spec.input_bits) * max_level(spec.weight_bits)) as f64;
        ints.map(|&v| v as f64 / denom)
    }

    pub fn post_process(&self, stage: usize, raw: RealTensor) -> Result<RealTensor> {
        let layer = &self.layers[stage];
        let mut x = raw;
        if let Some(bn) = &layer.bn {
            x = epu_batchnorm(&x, bn)?;
        }
        if let Some(act) = layer.activation {
            x = epu_activation(&x, act)?;
        }
        if let Some(pool) = layer.pool {
            x = epu_avgpool(&x, pool)?;
        }
        Ok(x)
    }

    /// EPU element operations charged for a stage's post-processing.
    pub fn post_ops(&self, stage: usize) -> u64 {
        let layer = &self.layers[stage];
        let conv = self.shapes[stage].conv_out.iter().product::<usize>() as u64;
        let per = 1 + u64::from(layer.bn.is_some()) + u64::from(layer.activation.is_some());
        let pool = if layer.pool.is_some() { conv } else { 0 };
        let requant = if self.layers.get(stage + 1).is_some_and(|l| l.spec.quantize) {
            self.shapes[stage].output.iter().product::<usize>() as u64
        } else {
            0
        };
        conv * per + pool + requant
    }
}

/// Per-stage record of a network run.
#[derive(Clone, Debug, PartialEq)]
pub struct StageTrace {
    pub name: String,
    pub int_output: Option<IntTensor>,
    pub output: RealTensor,
    pub cost: CostReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkRun {
    pub scores: RealTensor,
    pub stages: Vec<StageTrace>,
    pub cost: CostReport,
    /// Frames completed, one per output position per stage.
    pub frames: u64,
}

impl NetworkRun {
    /// Index of the largest score.
    pub fn prediction(&self) -> usize {
        argmax(self.scores.data())
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn acc_config(cost: &CostParams) -> AccumulatorConfig {
    AccumulatorConfig {
        width: cost.accumulator_width,
        checkpoint_interval: cost.checkpoint_interval,
        ..Default::default()
    }
}

/// One stage's executor, reused by the uninterrupted and intermittent runners.
#[derive(Clone, Debug)]
pub(crate) enum StageExec {
    Bitwise(Box<BitwiseConv>),
    Real(RealTensor),
}

impl StageExec {
    pub(crate) fn new(net: &Network, stage: usize, input: &RealTensor, hier: &MemoryHierarchy) -> Result<Self> {
        let x = net.stage_input(stage, input)?;
        let layer = &net.layers[stage];
        match net.quantized_weights(stage) {
            Some(w) => {
                let q = quantize(&x, layer.spec.input_bits)?;
                Ok(StageExec::Bitwise(Box::new(BitwiseConv::new(&q, w, &layer.spec, hier)?)))
            }
            None => Ok(StageExec::Real(x)),
        }
    }
}

/// Full-precision outputs of one position for every output channel.
pub(crate) fn real_position(net: &Network, stage: usize, x: &RealTensor, pos: usize, out: &mut [f64]) -> Result<()> {
    let layer = &net.layers[stage];
    let spec = &layer.spec;
    let s = net.shapes[stage];
    let (h, w) = (s.input[1], s.input[2]);
    let (oy, ox) = (pos / s.conv_out[2], pos % s.conv_out[2]);
    let pad = spec.padding.amount() as isize;
    let l = spec.vector_len();
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..l {
            let (c, dy, dx) = spec.field_coord(j);
            let iy = (oy * spec.stride + dy) as isize - pad;
            let ix = (ox * spec.stride + dx) as isize - pad;
            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                continue;
            }
            acc += x.at3(c, iy as usize, ix as usize) * layer.weights.data()[k * l + j];
        }
        *o = acc;
    }
    Ok(())
}

/// Cost of one stage: mapped bit-wise work for quantized layers, EPU MACs
/// for full-precision ones, plus post-processing.
pub fn stage_cost(net: &Network, stage: usize, hier: &MemoryHierarchy, cost: &CostParams) -> Result<CostReport> {
    let layer = &net.layers[stage];
    let s = net.shapes[stage];
    let mut report = if layer.spec.quantize {
        let plan = super::map_layer(&layer.spec, (s.input[1], s.input[2]), hier)?;
        layer_cost(&plan, &layer.spec, cost)?
    } else {
        let macs = s.conv_out.iter().product::<usize>() as u64 * layer.spec.vector_len() as u64;
        epu_cost(macs, cost)
    };
    report.merge(&epu_cost(net.post_ops(stage), cost));
    Ok(report)
}

/// Runs inference for one `[C, H, W]` input.
pub fn run_network(net: &Network, input: &RealTensor, hier: &MemoryHierarchy, cost: &CostParams) -> Result<NetworkRun> {
    let mut x = input.clone();
    let mut stages = Vec::with_capacity(net.layers.len());
    let mut total = CostReport::default();
    for (i, layer) in net.layers.iter().enumerate() {
        let s = net.shapes[i];
        let (k_out, p) = (s.conv_out[0], s.conv_out[1] * s.conv_out[2]);
        let (raw, ints) = match StageExec::new(net, i, &x, hier)? {
            StageExec::Bitwise(mut exec) => {
                let mut accs = vec![NvAccumulatorState::new(acc_config(cost)); k_out];
                let mut out = vec![0u64; k_out * p];
                for pos in 0..p {
                    accs.iter_mut().for_each(NvAccumulatorState::reset);
                    exec.compute_position(pos, &mut accs)?;
                    for (k, a) in accs.iter().enumerate() {
                        out[k * p + pos] = a.value();
                    }
                }
                let ints = IntTensor::new(s.conv_out.to_vec(), out)?;
                (net.dequantize_output(i, &ints), Some(ints))
            }
            StageExec::Real(xi) => (conv_real(&xi, &layer.weights, &layer.spec)?, None),
        };
        let stage_report = stage_cost(net, i, hier, cost)?;
        total.merge(&stage_report);
        x = net.post_process(i, raw)?;
        stages.push(StageTrace {
            name: layer.name.clone(),
            int_output: ints,
            output: x.clone(),
            cost: stage_report,
        });
    }
    total.finalize_throughput(1, cost)?;
    Ok(NetworkRun {
        scores: x,
        stages,
        cost: total,
        frames: net.total_frames(),
    })
}
