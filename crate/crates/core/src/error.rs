use thiserror::Error;

/// Errors raised by mesh construction, discretization and the solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("mesh input line {line}: {message}")]
    MeshFormat { line: usize, message: String },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("perturbation failed: {0}")]
    Perturbation(String),

    #[error("{what} order {order} out of range [{min}, {max}]")]
    OrderOutOfRange {
        what: &'static str,
        order: usize,
        min: usize,
        max: usize,
    },

    #[error("singular patch system at vertex {vertex}: min pivot {pivot:.3e}, scale {scale:.3e}")]
    SingularPatch {
        vertex: usize,
        pivot: f64,
        scale: f64,
    },

    #[error("singular Gram matrix on patch of vertex {vertex}")]
    SingularGram { vertex: usize },

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("linear solve did not reach tolerance: relative residuals {history:?}")]
    SolveResidual { history: Vec<f64> },

    #[error("nonlinear iteration did not converge after {iterations} steps: increments {history:?}")]
    NonlinearDivergence {
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("ragged table: row {row} has {got} cells, expected {expected}")]
    RaggedTable {
        row: usize,
        got: usize,
        expected: usize,
    },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
