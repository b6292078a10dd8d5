use thiserror::Error;

/// Errors raised by the toolkit.
///
/// The variants map onto the CLI exit codes: configuration and validation
/// problems are user errors, numerical failures carry a diagnostic payload,
/// and consistency failures signal a discretization defect.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing config key `{0}`")]
    MissingKey(String),

    #[error("model validation failed: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension {dim} exceeds the PDE cap of {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("non-finite value {value} at {location}")]
    NonFinite { value: f64, location: String },

    #[error("M-matrix violation at row {row} (node {coords:?}): {detail}")]
    MMatrix {
        row: usize,
        coords: Vec<f64>,
        detail: String,
    },

    #[error("quadrature did not converge: achieved {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("linear solver breakdown after {iterations} iterations, residual {residual:e}")]
    Solver { iterations: usize, residual: f64 },

    #[error("exhaustion did not converge by index {max_index}; sup changes {trace:?}")]
    NoConvergence { max_index: usize, trace: Vec<f64> },

    #[error("{what} did not stabilize; trace {trace:?}")]
    NotStabilized { what: String, trace: Vec<f64> },

    #[error("Taylor series budget exceeded ({terms} terms); use more steps")]
    TaylorBudget { terms: usize },

    #[error("negative mass {value:e} at node {node} (scheme violation)")]
    NegativeMass { value: f64, node: usize },

    #[error("invariant density is ambiguous: {0}")]
    Ambiguous(String),

    #[error("kernel of {nodes} rows exceeds the cap of {cap}")]
    KernelCap { nodes: usize, cap: usize },

    #[error("effective sample size collapsed to {ess:.1} at lambda = {lambda}")]
    SampleCollapse { lambda: f64, ess: f64 },

    #[error("non-finite state at step {step} on path {path} (seed {seed})")]
    PathBlowup { step: usize, path: usize, seed: u64 },

    #[error("reversibility legs disagree: {0}")]
    Consistency(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
