use super::hierarchy::MemoryHierarchy;
use super::map_layer;
use super::network::{real_position, Network, StageExec};
use crate::accumulator::NvAccumulatorState;
use crate::costmodel::{epu_cost, frame_cycles, CostParams};
use crate::error::{Error, Result};
use crate::intermittency::FrameProgram;
use crate::tensor::{IntTensor, RealTensor};

/// A network inference split into frames for intermittent execution.
///
/// Stage `s` is layer `s`; frame `f` is output position `f` of that layer
/// and covers every output channel. Quantized stages accumulate into NV
/// accumulators; full-precision stages write their results straight into
/// non-volatile scratch cells.
pub struct NetworkProgram<'a> {
    net: &'a Network,
    input: RealTensor,
    hier: MemoryHierarchy,
    frame_cycles: Vec<u64>,
    commit_cycles: Vec<u64>,
    accumulator_width: u32,
    exec: Option<StageExec>,
}

impl<'a> NetworkProgram<'a> {
    pub fn new(net: &'a Network, input: &RealTensor, hier: &MemoryHierarchy, cost: &CostParams) -> Result<Self> {
        if input.shape() != net.input_shape() {
            return Err(Error::Shape(format!(
                "network input is {:?}, got {:?}",
                net.input_shape(),
                input.shape()
            )));
        }
        let mut fc = Vec::new();
        let mut cc = Vec::new();
        for (s, layer) in net.layers().iter().enumerate() {
            let shape = net.shapes()[s];
            let cycles = if layer.spec.quantize {
                let plan = map_layer(&layer.spec, (shape.input[1], shape.input[2]), hier)?;
                frame_cycles(&plan, &layer.spec, cost)
            } else {
                let macs = (layer.spec.out_channels * layer.spec.vector_len()) as u64;
                epu_cost(macs, cost).cycles
            };
            fc.push(cycles.max(1));
            cc.push(epu_cost(net.post_ops(s), cost).cycles);
        }
        Ok(Self {
            net,
            input: input.clone(),
            hier: *hier,
            frame_cycles: fc,
            commit_cycles: cc,
            accumulator_width: cost.accumulator_width,
            exec: None,
        })
    }

    fn channels(&self, stage: usize) -> usize {
        self.net.layers()[stage].spec.out_channels
    }

    fn quantized(&self, stage: usize) -> bool {
        self.net.layers()[stage].spec.quantize
    }
}

impl FrameProgram for NetworkProgram<'_> {
    type Bank = RealTensor;
    type Output = RealTensor;

    fn stages(&self) -> usize {
        self.net.layers().len()
    }

    fn frames(&self, stage: usize) -> usize {
        self.net.frames(stage)
    }

    fn frame_width(&self, stage: usize) -> usize {
        if self.quantized(stage) {
            self.channels(stage)
        } else {
            0
        }
    }

    fn frame_scratch(&self, stage: usize) -> usize {
        if self.quantized(stage) {
            0
        } else {
            self.channels(stage)
        }
    }

    fn accumulator_width(&self) -> u32 {
        self.accumulator_width
    }

    fn frame_cycles(&self, stage: usize, _frame: usize) -> u64 {
        self.frame_cycles[stage]
    }

    fn commit_cycles(&self, stage: usize) -> u64 {
        self.commit_cycles[stage]
    }

    fn initial_bank(&self) -> RealTensor {
        self.input.clone()
    }

    fn begin_stage(&mut self, stage: usize, input: &RealTensor) -> Result<()> {
        self.exec = Some(StageExec::new(self.net, stage, input, &self.hier)?);
        Ok(())
    }

    fn run_frame(&mut self, stage: usize, frame: usize, accs: &mut [NvAccumulatorState], scratch: &mut [f64]) -> Result<()> {
        match self.exec.as_mut() {
            Some(StageExec::Bitwise(exec)) => exec.compute_position(frame, accs),
            Some(StageExec::Real(x)) => real_position(self.net, stage, x, frame, scratch),
            None => Err(Error::Structural("frame run before its stage began".into())),
        }
    }

    fn commit(&mut self, stage: usize, _input: &RealTensor, accs: &[NvAccumulatorState], scratch: &[f64]) -> Result<RealTensor> {
        let shape = self.net.shapes()[stage].conv_out;
        let k_out = shape[0];
        let p = shape[1] * shape[2];
        // frames hold position-major values; outputs are channel-major
        let raw = if self.quantized(stage) {
            let mut v = vec![0u64; k_out * p];
            for (i, a) in accs.iter().enumerate() {
                v[(i % k_out) * p + i / k_out] = a.value();
            }
            self.net.dequantize_output(stage, &IntTensor::new(shape.to_vec(), v)?)
        } else {
            let mut v = vec![0.0; k_out * p];
            for (i, &x) in scratch.iter().enumerate() {
                v[(i % k_out) * p + i / k_out] = x;
            }
            RealTensor::new(shape.to_vec(), v)?
        };
        self.net.post_process(stage, raw)
    }

    fn finish(&self, last: &RealTensor) -> RealTensor {
        last.clone()
    }
}
