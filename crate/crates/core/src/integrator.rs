//! Explicit Euler–Maruyama stepping of the coupled N-particle system.
//!
//! One step advances every particle by
//!
//! ```text
//! X^k(t+Δ) = X^k(t) + f(X^k_t, μ_t)Δ + g(X^k_t, μ_t)ΔB^k + g⁰(X^k_t, μ_t)ΔB⁰
//! ```
//!
//! with the empirical measure `μ_t` frozen before the step: every particle
//! sees the same measure, so the update is a pure per-particle map and the
//! result cannot depend on update order or thread schedule. Coefficients are
//! evaluated at the left endpoint. `ΔB^k` comes from the particle's keyed
//! idiosyncratic stream and `ΔB⁰` from the common stream shared by all
//! particles of a replication.
//!
//! Cubic drifts under a too-large step must fail loudly rather than emit
//! NaNs, so any state that leaves the finite range aborts the run with the
//! particle index and time attached.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid_steps;
use crate::linalg::norm;
use crate::measures::{moment, EmpiricalMeasure};
use crate::model::{InitialData, InitialSegmentCtx, ModelSpec, SegmentBuffer};
use crate::noise::{brownian_increment, StreamKey};

/// States whose Euclidean norm exceeds this are treated as blow-up.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// `N` coupled particles sharing one common-noise stream.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    model: ModelSpec,
    buffers: Vec<SegmentBuffer>,
    /// Idiosyncratic stream identity per particle slot. Defaults to the slot
    /// index; permuting states together with these indices permutes the
    /// trajectories identically.
    stream_indices: Vec<u64>,
    dt: f64,
    step_count: u64,
    master_seed: u64,
    replication_index: u64,
}

impl ParticleSystem {
    pub fn new(
        model: ModelSpec,
        n_particles: usize,
        dt: f64,
        init: &InitialData,
        master_seed: u64,
        replication_index: u64,
    ) -> Result<Self> {
        let indices = (0..n_particles as u64).collect();
        Self::with_stream_indices(model, n_particles, dt, init, master_seed, replication_index, indices)
    }

    /// As [`ParticleSystem::new`] but with explicit idiosyncratic stream
    /// indices (one per particle slot).
    pub fn with_stream_indices(
        model: ModelSpec,
        n_particles: usize,
        dt: f64,
        init: &InitialData,
        master_seed: u64,
        replication_index: u64,
        stream_indices: Vec<u64>,
    ) -> Result<Self> {
        if n_particles == 0 {
            return Err(Error::InvalidParameter {
                name: "n_particles",
                reason: "need at least one particle".into(),
            });
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("step size must be positive, got {dt}"),
            });
        }
        if stream_indices.len() != n_particles {
            return Err(Error::InvalidParameter {
                name: "stream_indices",
                reason: format!(
                    "need one stream index per particle ({n_particles}), got {}",
                    stream_indices.len()
                ),
            });
        }
        let nodes = grid_steps(model.delay(), dt).ok_or(Error::MisalignedGrid {
            what: "delay",
            value: model.delay(),
            dt,
        })? as usize
            + 1;
        let buffers = (0..n_particles)
            .map(|k| {
                let ctx = InitialSegmentCtx {
                    particle: k,
                    replication_index,
                    master_seed,
                    nodes,
                    dim: model.dim(),
                };
                init.materialize(&ctx, model.delay(), dt)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            buffers,
            stream_indices,
            dt,
            step_count: 0,
            master_seed,
            replication_index,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.buffers.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Current time, always an integer multiple of the step size.
    pub fn time(&self) -> f64 {
        self.step_count as f64 * self.dt
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn replication_index(&self) -> u64 {
        self.replication_index
    }

    /// Current state of particle `k`.
    pub fn state(&self, k: usize) -> &[f64] {
        self.buffers[k].current()
    }

    /// Path segment of particle `k`.
    pub fn buffer(&self, k: usize) -> &SegmentBuffer {
        &self.buffers[k]
    }

    pub fn buffers(&self) -> &[SegmentBuffer] {
        &self.buffers
    }

    /// Empirical measure of the current particle states.
    pub fn measure(&self) -> EmpiricalMeasure {
        let dim = self.model.dim();
        let mut flat = Vec::with_capacity(self.buffers.len() * dim);
        for buf in &self.buffers {
            flat.extend_from_slice(buf.current());
        }
        EmpiricalMeasure::new(dim, flat).expect("a system always has particles")
    }

    /// Advances the whole system by one step.
    pub fn step(&mut self) -> Result<()> {
        let dim = self.model.dim();
        let measure = self.measure();
        let step_index = self.step_count;
        let common = brownian_increment(
            &StreamKey::common(self.master_seed, self.replication_index, step_index),
            dim,
            self.dt,
        );

        let new_states: Vec<Vec<f64>> = self
            .buffers
            .par_iter()
            .enumerate()
            .map(|(k, buffer)| {
                let drift = self.model.drift(buffer, &measure);
                assert_eq!(drift.len(), dim, "drift returned wrong dimension");
                let diffusion = self.model.diffusion(buffer, &measure);
                let common_diffusion = self.model.common_diffusion(buffer, &measure);
                let idio = brownian_increment(
                    &StreamKey::idiosyncratic(
                        self.master_seed,
                        self.stream_indices[k],
                        self.replication_index,
                        step_index,
                    ),
                    dim,
                    self.dt,
                );
                let kick = diffusion.mul_vec(&idio);
                let common_kick = common_diffusion.mul_vec(&common);
                buffer
                    .current()
                    .iter()
                    .enumerate()
                    .map(|(c, x)| x + drift[c] * self.dt + kick[c] + common_kick[c])
                    .collect()
            })
            .collect();

        let time_after = (self.step_count + 1) as f64 * self.dt;
        for (k, state) in new_states.iter().enumerate() {
            if !state.iter().all(|v| v.is_finite()) || norm(state) > BLOWUP_THRESHOLD {
                return Err(Error::BlowUp {
                    particle: k,
                    time: time_after,
                    threshold: BLOWUP_THRESHOLD,
                    partial: None,
                });
            }
        }
        for (buffer, state) in self.buffers.iter_mut().zip(&new_states) {
            buffer.push(state);
        }
        self.step_count += 1;
        Ok(())
    }

    /// Runs until `horizon` (a grid multiple), recording moments and the
    /// leading particle paths every `record_stride` steps.
    ///
    /// On blow-up the error carries everything recorded so far.
    pub fn run(&mut self, horizon: f64, options: &RunOptions) -> Result<TrajectoryRecord> {
        let steps = grid_steps(horizon, self.dt).ok_or(Error::MisalignedGrid {
            what: "horizon",
            value: horizon,
            dt: self.dt,
        })?;
        let stride = options.record_stride.max(1);
        let mut record = TrajectoryRecord::new(options, self.n_particles());
        record.observe(self);
        for s in 1..=steps {
            if let Err(err) = self.step() {
                return Err(match err {
                    Error::BlowUp {
                        particle,
                        time,
                        threshold,
                        ..
                    } => Error::BlowUp {
                        particle,
                        time,
                        threshold,
                        partial: Some(Box::new(record)),
                    },
                    other => other,
                });
            }
            if s % stride == 0 || s == steps {
                record.observe(self);
            }
        }
        Ok(record)
    }
}

/// What [`ParticleSystem::run`] records.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Record every this many steps (the initial and final states are always
    /// recorded).
    pub record_stride: u64,
    /// Moment orders to track.
    pub moments: Vec<f64>,
    /// Number of leading particles whose paths are stored.
    pub path_particles: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            record_stride: 1,
            moments: vec![2.0],
            path_particles: 0,
        }
    }
}

/// Recorded output of a run: times, per-order moment tracks, and optionally
/// the paths of the leading particles.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// Moment orders, parallel to `moments`.
    pub moment_orders: Vec<f64>,
    /// `moments[i][t]` is the `moment_orders[i]`-th empirical moment at
    /// `times[t]`.
    pub moments: Vec<Vec<f64>>,
    /// `paths[k][t]` is the state of recorded particle `k` at `times[t]`.
    pub paths: Vec<Vec<Vec<f64>>>,
}

impl TrajectoryRecord {
    fn new(options: &RunOptions, n_particles: usize) -> Self {
        Self {
            times: Vec::new(),
            moment_orders: options.moments.clone(),
            moments: vec![Vec::new(); options.moments.len()],
            paths: vec![Vec::new(); options.path_particles.min(n_particles)],
        }
    }

    fn observe(&mut self, sys: &ParticleSystem) {
        self.times.push(sys.time());
        if !self.moment_orders.is_empty() {
            let measure = sys.measure();
            for (order, track) in self.moment_orders.iter().zip(&mut self.moments) {
                track.push(moment(&measure, *order));
            }
        }
        for (k, path) in self.paths.iter_mut().enumerate() {
            path.push(sys.state(k).to_vec());
        }
    }

    /// The track recorded for moment order `q`, if any.
    pub fn moment_track(&self, q: f64) -> Option<&[f64]> {
        self.moment_orders
            .iter()
            .position(|&o| o == q)
            .map(|i| self.moments[i].as_slice())
    }
}
