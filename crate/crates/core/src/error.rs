use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// A real-valued input fell outside the quantizer's domain.
    #[error("value {value} at index {index} is outside [0, 1]")]
    Domain { index: usize, value: f64 },

    /// An integer does not fit the declared bit-width.
    #[error("value {value} at index {index} does not fit in {bits} bits")]
    BitWidth { index: usize, value: u64, bits: u32 },

    #[error("structural error: {0}")]
    Structural(String),

    #[error("{what} index {index} out of range (limit {limit})")]
    Bounds {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("invalid operand: {0}")]
    InvalidOperand(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shift {shift} exceeds maximum {max_shift}")]
    ShiftRange { shift: u32, max_shift: u32 },

    #[error("empty bit vector")]
    EmptyVector,

    /// No valid non-volatile checkpoint exists; the accumulator was reset to zero.
    #[error("no valid checkpoint; accumulator cold-started from zero")]
    ColdStart,

    #[error("mapping needs {required} rows per mat but only {available} are available")]
    Capacity { required: usize, available: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("accumulator saturated at {width} bits")]
    Saturated { width: u32 },

    #[error("config error: {0}")]
    Config(String),

    #[error("journal integrity error: {0}")]
    Integrity(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
