use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice spec: {0}")]
    InvalidLattice(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("qubit {qubit} out of range for a {n_qubits}-qubit register")]
    QubitOutOfRange { qubit: usize, n_qubits: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("measurement branch has vanishing norm ({norm:e})")]
    ZeroNormBranch { norm: f64 },

    #[error("expectation value has imaginary part {0:e}")]
    NonHermitian(f64),

    #[error("no perfect nearest-neighbour matching exists on this lattice")]
    NoPerfectMatching,

    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),

    #[error("LAPACK routine {routine} failed with info = {info}")]
    Lapack { routine: &'static str, info: i32 },

    #[error("BLAS self-test failed ({0}); try OPENBLAS_CORETYPE=Haswell")]
    Blas(String),

    #[error("target {target} outside attainable range [{low}, {high}]")]
    OutOfRange { target: f64, low: f64, high: f64 },

    #[error("fit refused: {0}")]
    FitRefused(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("trajectory {index} failed: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
