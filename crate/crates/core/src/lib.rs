//! Interacting particle systems for mean-field stochastic functional
//! differential equations (SFDEs) driven by both idiosyncratic and common
//! Brownian noise.
//!
//! The state of the limit equation at time `t` depends on the path segment
//! `{X(t+θ), -τ ≤ θ ≤ 0}` and on the conditional law of `X(t)` given the
//! common noise. That law is never available in closed form, so everything
//! here works with its particle proxy: `N` coupled copies sharing one common
//! Brownian path, interacting through their empirical measure.
//!
//! The crate is organised as:
//!
//! * [`model`] — path segments on a uniform grid, coefficient functionals,
//!   and the built-in scalar example family with distributed delay.
//! * [`noise`] — counter-keyed Gaussian streams. Every increment is a pure
//!   function of `(seed, kind, particle, replication, step, component)`,
//!   which is what makes runs replayable and lets systems of different sizes
//!   share the exact same driving noise.
//! * [`integrator`] — explicit Euler–Maruyama stepping of the N-particle
//!   system with the empirical measure frozen within each step.
//! * [`measures`] — empirical measures, exact and approximate Wasserstein
//!   distances, moments, and the theoretical empirical-measure convergence
//!   rate `ε_N`.
//! * [`experiments`] — the chaos-rate, moment-stability and Lyapunov
//!   generator pipelines built on top of the above.

// Validation deliberately writes `!(x > 0.0)` so that NaN fails the check;
// the positively-phrased comparison would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod integrator;
pub mod linalg;
pub mod measures;
pub mod model;
pub mod noise;

pub use error::{Error, Result};
pub use integrator::{ParticleSystem, RunOptions, TrajectoryRecord};
pub use linalg::SquareMatrix;
pub use measures::{EmpiricalMeasure, RateParams};
pub use model::{ExampleModelParams, InitialData, ModelSpec, SegmentBuffer};
pub use noise::{StreamKey, StreamKind};

/// Checks that `len` is a non-negative integer multiple of `dt` (up to a
/// relative tolerance of 1e-9) and returns the number of steps.
///
/// Grid alignment is enforced everywhere a duration meets the step size:
/// delays, delay spans, and horizons. Silent rounding would misalign the
/// delay quadrature with the integration grid, so misaligned inputs are
/// rejected instead.
pub fn grid_steps(len: f64, dt: f64) -> Option<u64> {
    if !(dt > 0.0) || !len.is_finite() || len < 0.0 {
        return None;
    }
    let ratio = len / dt;
    let rounded = ratio.round();
    if rounded > u64::MAX as f64 {
        return None;
    }
    if (ratio - rounded).abs() <= 1e-9 * ratio.abs().max(1.0) {
        Some(rounded as u64)
    } else {
        None
    }
}
