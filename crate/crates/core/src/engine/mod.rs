//! Layer mapping and execution.
//!
//! Quantized layers run bit-wise: each output element is the sum over
//! weight plane `n` and input plane `m` of `popcount(C_n(W) AND C_m(I))`
//! shifted left by `m + n`. Full-precision layers and all post-processing
//! run on the EPU model.

mod conv;
mod epu;
mod hierarchy;
mod layer;
mod mapping;
mod network;
mod program;

pub use conv::{conv_bitwise, BitwiseConv};
pub use epu::{
    conv_real, epu_activation, epu_avgpool, epu_avgpool_int, epu_batchnorm, Activation, BatchNorm, Pool,
};
pub use hierarchy::{MatCoord, MemoryHierarchy};
pub use layer::{ConvLayerSpec, Padding};
pub use mapping::{map_layer, AndOp, MappingPlan, UnitPlacement};
pub use network::{argmax, run_network, stage_cost, ComputeLayer, Network, NetworkRun, StageShape, StageTrace};
pub use program::NetworkProgram;
