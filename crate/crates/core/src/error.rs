//! Error type shared across the crate.

use crate::integrator::TrajectoryRecord;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter violates its documented constraint.
    #[error("invalid `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A duration is not an integer multiple of the grid step.
    #[error("{what} = {value} is not a positive-grid multiple of dt = {dt}")]
    MisalignedGrid {
        what: &'static str,
        value: f64,
        dt: f64,
    },

    /// Segment lookup offset outside the stored window.
    #[error("segment offset {theta} lies outside [-{tau}, 0]")]
    ThetaOutOfRange { theta: f64, tau: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Exact optimal-assignment transport is limited to small supports.
    #[error(
        "support size {n} exceeds the exact-assignment limit {limit}; \
         use the 1-d weights or the sliced approximation"
    )]
    SupportTooLarge { n: usize, limit: usize },

    /// The requested `(q, p, d)` combination falls on an excluded boundary
    /// of the empirical-measure rate function.
    #[error("unsupported rate parameters: {0}")]
    UnsupportedRateParams(String),

    /// A particle state left the finite range during integration.
    #[error("particle {particle} blew up at t = {time}: state not finite or |x| > {threshold:e}")]
    BlowUp {
        particle: usize,
        time: f64,
        threshold: f64,
        /// Everything recorded before the failure, when a recording run was
        /// in progress.
        partial: Option<Box<TrajectoryRecord>>,
    },

    /// A Lyapunov derivative callback needed by a generator term is missing.
    #[error("Lyapunov derivative `{derivative}` is required by the {term} term but was not provided")]
    MissingDerivative {
        derivative: &'static str,
        term: &'static str,
    },

    /// The drift-rate function is non-positive on the whole admissible range.
    #[error("no admissible certificate: the decay rate is non-positive for every alpha > 1")]
    NoCertificate,
}

pub type Result<T> = std::result::Result<T, Error>;
