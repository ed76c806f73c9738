//! Functional and cost-model simulator of a bit-wise processing-in-memory CNN
//! accelerator built on SOT-MRAM sub-arrays.
//!
//! The pipeline for a quantized layer is: decompose operands into bit-planes
//! ([`bitplane`]), AND weight and input planes inside a sub-array
//! ([`subarray`]), count the set bits with a 4:2 compressor tree, weight the
//! count with a shift register and add it into a non-volatile accumulator
//! ([`accumulator`]). [`engine`] maps layers onto the memory hierarchy and
//! runs whole networks, [`costmodel`] charges cycles and energy,
//! [`intermittency`] replays runs under power failures and [`oracle`] holds
//! the reference implementations everything is checked against.

pub mod accumulator;
pub mod bitplane;
pub mod bits;
pub mod config;
pub mod costmodel;
pub mod engine;
pub mod error;
pub mod intermittency;
pub mod oracle;
pub mod subarray;
pub mod tensor;

pub use error::{Error, Result};
