//! Error taxonomy shared by every module.
//!
//! Operations fail loudly rather than silently truncating or extrapolating:
//! a request that exceeds the configured truncation order, a lattice site on
//! the wrong side of a wall, or a contour radius that collides with a pole is
//! a hard error, not a warning.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong while building systems or evaluating sums.
#[derive(Debug, Error)]
pub enum Error {
    /// Two momenta (or lattice sites) coincide closely enough that a phase
    /// shift or Vandermonde factor is numerically meaningless.
    #[error("coincident parameters: {0}")]
    Coincidence(String),

    /// A phase-shift denominator or momentum vanished.
    #[error("pole in closed-form expression: {0}")]
    Pole(String),

    /// A time index beyond the configured truncation order was requested.
    #[error("time index {requested} exceeds truncation order {p_max}")]
    Truncation { requested: usize, p_max: usize },

    /// Enumerating 2^n configurations would exceed the configured cap.
    #[error("system size {n} exceeds enumeration cap {cap}")]
    Size { n: usize, cap: usize },

    /// A point lies outside the admissible domain of a geometry.
    #[error("point outside admissible domain: {0}")]
    Domain(String),

    /// Reality constraints of the real-potential mode are violated.
    #[error("times violate real-potential mode: {0}")]
    Mode(String),

    /// A discrete index (charge sector, moment order, …) is out of range.
    #[error("index out of range: {0}")]
    Range(String),

    /// A tau-function vanished inside a finite-difference stencil.
    #[error("degenerate stencil: {0}")]
    Degenerate(String),

    /// A quadrature contour is invalid (crosses or touches a pole).
    #[error("invalid contour: {0}")]
    Contour(String),

    /// A refinement loop failed to converge to the requested tolerance.
    #[error("no convergence: {0}")]
    NonConvergence(String),

    /// The requested combination (hierarchy, method, …) is not defined.
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// A magnitude left the representable log-space range.
    #[error("overflow guard tripped: {0}")]
    Overflow(String),

    /// Malformed input data (config files, tables, …).
    #[error("invalid input: {0}")]
    Input(String),
}
