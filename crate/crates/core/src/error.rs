use thiserror::Error;

/// Errors produced by model construction, the PDE solver, feedback
/// evaluation, and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent or invalid configuration (bad dimensions, parameters
    /// out of range, malformed input files).
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument violates a mathematical precondition (e.g. a control
    /// outside its box, a residual probe on a boundary slice).
    #[error("domain error: {0}")]
    Domain(String),

    /// A state or query point lies outside the spatial grid.
    #[error("out of domain: {0}")]
    OutOfDomain(String),

    /// A requested operation is outside the supported problem class.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The CFL condition would require more time steps than the cap allows.
    #[error("infeasible resolution: {0}")]
    InfeasibleResolution(String),

    /// A non-finite value appeared during a numerical sweep or simulation.
    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
