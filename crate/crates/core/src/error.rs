//! Error taxonomy shared by every module.
//!
//! Three families matter to callers: contract/validation errors (bad inputs,
//! broken preconditions), domain errors (structurally singular inputs such as
//! the origin of frequency space), and numeric failures (NaN blowups detected
//! mid-computation). The CLI maps the first two to exit code 2 and the last
//! to exit code 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation was violated (wrong space, grid
    /// mismatch, off-manifold point, missing declared limit, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The input lies outside the mathematical domain of the operation
    /// (non-positive curve parameter, invalid exponent, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The operation is undefined at a singular point (the origin of the
    /// frequency lattice has no fibre through it).
    #[error("singular point: {0}")]
    Singular(String),

    /// A dense representation was requested beyond the supported size.
    #[error("size limit exceeded: {0}")]
    Size(String),

    /// Randomized sampling could not produce admissible samples.
    #[error("sampling failure: {0}")]
    Sampling(String),

    /// The frequency lattice cannot supply the requested sample region.
    #[error("insufficient lattice: {0}")]
    InsufficientLattice(String),

    /// A requested discrete frequency falls outside the representable
    /// (Nyquist) range of the grid.
    #[error("aliasing: {0}")]
    Aliasing(String),

    /// An explicit time step violates the advertised stability bound.
    #[error("stability violation: {0}")]
    Stability(String),

    /// A numeric blowup (NaN or infinity) was detected mid-run.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A serialized artifact could not be parsed back.
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for errors that indicate a numeric blowup rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
