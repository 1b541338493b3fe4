use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("lattice size N={0} unsupported (need 4 <= N <= 127)")]
    LatticeSize(usize),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("spectral function undefined on eigenvalue {0}")]
    Domain(f64),

    #[error("representation error: {0}")]
    Representation(String),

    #[error("kernel component {residual:e} exceeds tolerance {tolerance:e}")]
    Projection { residual: f64, tolerance: f64 },

    #[error("Neumann series diverged at order {order}: ratio {ratio:.4}, {iterations} iterations")]
    Divergence {
        order: usize,
        ratio: f64,
        iterations: usize,
    },

    #[error("homological residual {residual:e} at order {order} exceeds {tolerance:e}")]
    Residual {
        order: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("monomial degree {degree} exceeds cap {cap}")]
    DegreeCap { degree: usize, cap: usize },

    #[error("term count {count} exceeds guard {guard}")]
    TermCount { count: usize, guard: usize },

    #[error("non-finite state at integration step {step}")]
    BlowUp { step: usize },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
