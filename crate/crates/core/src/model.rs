//! Path segments, coefficient functionals, and the built-in example family.
//!
//! A segment is the discrete stand-in for a continuous path window
//! `{φ(θ), -τ ≤ θ ≤ 0}`: the `m + 1` grid values on the uniform grid of
//! step `Δ`, with `m = τ/Δ`. The grid step must divide the delay exactly —
//! delay quadrature and the integration grid share nodes by construction,
//! never by rounding.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_steps;
use crate::linalg::SquareMatrix;
use crate::measures::EmpiricalMeasure;

/// A particle's path history on the uniform grid over `[-τ, 0]`.
///
/// Values are kept in a fixed-size circular window ordered oldest → newest;
/// the last node is the current state `φ(0)`. Pushing a new state drops the
/// oldest node, so the length never changes.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBuffer {
    dim: usize,
    delay: f64,
    step: f64,
    /// `(m + 1) * dim` values; `head` is the physical slot of the oldest node.
    data: Vec<f64>,
    head: usize,
}

impl SegmentBuffer {
    /// Segment identically equal to `value` on the whole window.
    pub fn constant(delay: f64, step: f64, value: &[f64]) -> Result<Self> {
        let nodes = Self::node_count(delay, step)?;
        Self::check_dim(value.len())?;
        Ok(Self {
            dim: value.len(),
            delay,
            step,
            data: value.repeat(nodes),
            head: 0,
        })
    }

    /// Segment from explicit grid nodes ordered oldest → newest.
    pub fn from_nodes(delay: f64, step: f64, nodes: &[Vec<f64>]) -> Result<Self> {
        let expected = Self::node_count(delay, step)?;
        if nodes.len() != expected {
            return Err(Error::InvalidParameter {
                name: "nodes",
                reason: format!("expected {expected} grid nodes, got {}", nodes.len()),
            });
        }
        let dim = nodes[0].len();
        Self::check_dim(dim)?;
        let mut data = Vec::with_capacity(expected * dim);
        for node in nodes {
            if node.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: node.len(),
                });
            }
            data.extend_from_slice(node);
        }
        Ok(Self {
            dim,
            delay,
            step,
            data,
            head: 0,
        })
    }

    fn node_count(delay: f64, step: f64) -> Result<usize> {
        let m = grid_steps(delay, step).ok_or(Error::MisalignedGrid {
            what: "delay",
            value: delay,
            dt: step,
        })?;
        Ok(m as usize + 1)
    }

    fn check_dim(dim: usize) -> Result<()> {
        if dim == 0 {
            return Err(Error::InvalidParameter {
                name: "dim",
                reason: "state dimension must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of grid intervals `m = τ/Δ`.
    pub fn delay_steps(&self) -> usize {
        self.data.len() / self.dim - 1
    }

    /// Grid node `i`, with `0` the oldest node and `delay_steps()` the newest.
    pub fn node(&self, i: usize) -> &[f64] {
        let cap = self.delay_steps() + 1;
        assert!(i < cap, "node index {i} out of range (m = {})", cap - 1);
        let slot = (self.head + i) % cap;
        &self.data[slot * self.dim..(slot + 1) * self.dim]
    }

    /// The current state `φ(0)`.
    pub fn current(&self) -> &[f64] {
        self.node(self.delay_steps())
    }

    /// Grid nodes ordered oldest → newest.
    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        (0..=self.delay_steps()).map(move |i| self.node(i))
    }

    /// Drops the oldest node and appends `state` as the new current value.
    pub fn push(&mut self, state: &[f64]) {
        assert_eq!(state.len(), self.dim, "pushed state has wrong dimension");
        let cap = self.delay_steps() + 1;
        let slot = self.head;
        self.data[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(state);
        self.head = (self.head + 1) % cap;
    }

    /// Evaluates the segment at `theta ∈ [-τ, 0]`: exact on grid nodes,
    /// linear interpolation of the two bracketing nodes otherwise.
    pub fn value_at(&self, theta: f64) -> Result<Vec<f64>> {
        let tol = 1e-9 * self.delay.max(self.step);
        if theta < -self.delay - tol || theta > tol {
            return Err(Error::ThetaOutOfRange {
                theta,
                tau: self.delay,
            });
        }
        let m = self.delay_steps();
        let pos = ((theta + self.delay) / self.step).clamp(0.0, m as f64);
        let lower = pos.floor() as usize;
        let frac = pos - lower as f64;
        if frac <= 1e-12 || lower >= m {
            return Ok(self.node(lower.min(m)).to_vec());
        }
        let a = self.node(lower);
        let b = self.node(lower + 1);
        Ok(a.iter()
            .zip(b)
            .map(|(x, y)| x + frac * (y - x))
            .collect())
    }

    /// Trapezoid-rule integral of the segment over `[-span, 0]`.
    ///
    /// `span` must be a positive grid multiple not exceeding the delay; the
    /// quadrature is exact for affine segments. No `1/span` normalisation is
    /// applied.
    pub fn distributed_delay_integral(&self, span: f64) -> Result<Vec<f64>> {
        let k = grid_steps(span, self.step).ok_or(Error::MisalignedGrid {
            what: "delay span",
            value: span,
            dt: self.step,
        })? as usize;
        let m = self.delay_steps();
        if k == 0 || k > m {
            return Err(Error::InvalidParameter {
                name: "span",
                reason: format!(
                    "span {span} must cover between 1 and {m} grid intervals of {}",
                    self.step
                ),
            });
        }
        let mut acc = vec![0.0; self.dim];
        for i in (m - k)..=m {
            let weight = if i == m - k || i == m { 0.5 } else { 1.0 };
            for (a, v) in acc.iter_mut().zip(self.node(i)) {
                *a += weight * v;
            }
        }
        for a in &mut acc {
            *a *= self.step;
        }
        Ok(acc)
    }
}

/// Drift functional `f(φ, μ)`.
pub type DriftFn = Arc<dyn Fn(&SegmentBuffer, &EmpiricalMeasure) -> Vec<f64> + Send + Sync>;
/// Diffusion functional `g(φ, μ)` (or the common-noise `g⁰`), a `d×d` matrix.
pub type DiffusionFn = Arc<dyn Fn(&SegmentBuffer, &EmpiricalMeasure) -> SquareMatrix + Send + Sync>;

/// Coefficients of one equation: drift, idiosyncratic diffusion, and
/// common-noise diffusion, all functionals of a path segment and a measure.
///
/// All three must be pure (identical inputs → identical outputs) and safe to
/// call concurrently; the integrator evaluates them from many threads against
/// a measure frozen per step.
#[derive(Clone)]
pub struct ModelSpec {
    dim: usize,
    delay: f64,
    drift: DriftFn,
    diffusion: DiffusionFn,
    common_diffusion: DiffusionFn,
    /// Polynomial growth exponent of the drift (metadata only).
    growth_exponent: f64,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("dim", &self.dim)
            .field("delay", &self.delay)
            .field("growth_exponent", &self.growth_exponent)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    pub fn new(
        dim: usize,
        delay: f64,
        drift: DriftFn,
        diffusion: DiffusionFn,
        common_diffusion: DiffusionFn,
        growth_exponent: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter {
                name: "dim",
                reason: "state dimension must be positive".into(),
            });
        }
        if !(delay >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "delay",
                reason: format!("delay must be non-negative, got {delay}"),
            });
        }
        if !(growth_exponent >= 2.0) {
            return Err(Error::InvalidParameter {
                name: "growth_exponent",
                reason: format!("growth exponent must be >= 2, got {growth_exponent}"),
            });
        }
        Ok(Self {
            dim,
            delay,
            drift,
            diffusion,
            common_diffusion,
            growth_exponent,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn growth_exponent(&self) -> f64 {
        self.growth_exponent
    }

    pub fn drift(&self, segment: &SegmentBuffer, measure: &EmpiricalMeasure) -> Vec<f64> {
        (self.drift)(segment, measure)
    }

    pub fn diffusion(&self, segment: &SegmentBuffer, measure: &EmpiricalMeasure) -> SquareMatrix {
        (self.diffusion)(segment, measure)
    }

    pub fn common_diffusion(
        &self,
        segment: &SegmentBuffer,
        measure: &EmpiricalMeasure,
    ) -> SquareMatrix {
        (self.common_diffusion)(segment, measure)
    }

    /// Checks `f(0, δ₀) = g(0, δ₀) = g⁰(0, δ₀) = 0`, the zero-equilibrium
    /// condition the stability experiments assume.
    ///
    /// `dt` fixes the probe segment's grid (it must divide the delay).
    pub fn vanishes_at_origin(&self, dt: f64) -> Result<bool> {
        let zero = SegmentBuffer::constant(self.delay, dt, &vec![0.0; self.dim])?;
        let dirac0 = EmpiricalMeasure::dirac_zero(self.dim);
        let tol = 1e-12;
        let f = self.drift(&zero, &dirac0);
        let g = self.diffusion(&zero, &dirac0);
        let g0 = self.common_diffusion(&zero, &dirac0);
        Ok(f.iter().all(|v| v.abs() <= tol) && g.max_abs() <= tol && g0.max_abs() <= tol)
    }
}

/// Per-particle initial-segment sampler: grid nodes ordered oldest → newest.
pub type SegmentSampler = Arc<dyn Fn(&InitialSegmentCtx) -> Vec<Vec<f64>> + Send + Sync>;

/// Initial data for a particle system: one segment per particle.
#[derive(Clone)]
pub enum InitialData {
    /// Every particle starts from the same constant segment.
    Constant(Vec<f64>),
    /// Per-particle segment sampler; must be a pure function of the context
    /// so that particle `k` receives the same segment in runs of any size.
    Sampler(SegmentSampler),
}

impl std::fmt::Debug for InitialData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Self::Sampler(_) => f.write_str("Sampler(..)"),
        }
    }
}

/// What a segment sampler gets to see.
#[derive(Debug, Clone, Copy)]
pub struct InitialSegmentCtx {
    pub particle: usize,
    pub replication_index: u64,
    pub master_seed: u64,
    /// Number of grid nodes the returned segment must have (`m + 1`).
    pub nodes: usize,
    pub dim: usize,
}

impl InitialData {
    pub(crate) fn materialize(
        &self,
        ctx: &InitialSegmentCtx,
        delay: f64,
        step: f64,
    ) -> Result<SegmentBuffer> {
        match self {
            Self::Constant(value) => {
                if value.len() != ctx.dim {
                    return Err(Error::DimensionMismatch {
                        expected: ctx.dim,
                        got: value.len(),
                    });
                }
                SegmentBuffer::constant(delay, step, value)
            }
            Self::Sampler(sample) => SegmentBuffer::from_nodes(delay, step, &sample(ctx)),
        }
    }
}

/// Parameters of the built-in scalar family
///
/// ```text
/// dy = (a·y + b·y³ + w_τ ∫_{-span}^0 y(t+θ) dθ + w_m · mean(μ)) dt
///    + w_n (y + mean(μ)) dB + w_n (y + mean(μ)) dB⁰
/// ```
///
/// with defaults `a = -2`, `b = -3`, `w_τ = 1/4`, `w_m = 1/2`, `w_n = 1/2`,
/// `span = 1/4`. The defaults vanish at `(0, δ₀)` and the drift is
/// dissipative, so the family is the standard stability workload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExampleModelParams {
    pub linear_coeff: f64,
    pub cubic_coeff: f64,
    pub delay_weight: f64,
    pub mean_weight: f64,
    pub noise_weight: f64,
    pub delay_span: f64,
}

impl Default for ExampleModelParams {
    fn default() -> Self {
        Self {
            linear_coeff: -2.0,
            cubic_coeff: -3.0,
            delay_weight: 0.25,
            mean_weight: 0.5,
            noise_weight: 0.5,
            delay_span: 0.25,
        }
    }
}

impl ExampleModelParams {
    /// Builds the scalar `ModelSpec` with `τ = delay_span`, `d = 1`.
    pub fn build(&self) -> Result<ModelSpec> {
        if !(self.delay_span > 0.0) {
            return Err(Error::InvalidParameter {
                name: "delay_span",
                reason: format!("delay span must be positive, got {}", self.delay_span),
            });
        }
        let p = *self;
        let drift: DriftFn = Arc::new(move |segment, measure| {
            vec![example_drift(&p, segment, measure).expect("example drift on validated inputs")]
        });
        let diffusion_of = move |segment: &SegmentBuffer, measure: &EmpiricalMeasure| {
            let y = segment.current()[0];
            SquareMatrix::from_rows(1, vec![p.noise_weight * (y + measure.mean()[0])])
        };
        let diffusion: DiffusionFn = Arc::new(diffusion_of);
        let common_diffusion: DiffusionFn = Arc::new(diffusion_of);
        ModelSpec::new(1, p.delay_span, drift, diffusion, common_diffusion, 4.0)
    }
}

/// Drift of the example family at one `(segment, measure)` pair:
/// `a·φ(0) + b·φ(0)³ + w_τ ∫_{-span}^0 φ(θ) dθ + w_m · mean(μ)`.
pub fn example_drift(
    params: &ExampleModelParams,
    segment: &SegmentBuffer,
    measure: &EmpiricalMeasure,
) -> Result<f64> {
    if segment.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: segment.dim(),
        });
    }
    if measure.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: measure.dim(),
        });
    }
    let y = segment.current()[0];
    let integral = segment.distributed_delay_integral(params.delay_span)?[0];
    Ok(params.linear_coeff * y
        + params.cubic_coeff * y * y * y
        + params.delay_weight * integral
        + params.mean_weight * measure.mean()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_buf(delay: f64, step: f64, values: &[f64]) -> SegmentBuffer {
        let nodes: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        SegmentBuffer::from_nodes(delay, step, &nodes).unwrap()
    }

    #[test]
    fn construction_rejects_misaligned_delay() {
        assert!(matches!(
            SegmentBuffer::constant(0.25, 0.003, &[1.0]),
            Err(Error::MisalignedGrid { .. })
        ));
    }

    #[test]
    fn push_keeps_length_and_drops_oldest() {
        let mut buf = scalar_buf(0.2, 0.1, &[1.0, 2.0, 3.0]);
        buf.push(&[4.0]);
        let nodes: Vec<f64> = buf.nodes().map(|n| n[0]).collect();
        assert_eq!(nodes, vec![2.0, 3.0, 4.0]);
        assert_eq!(buf.current(), &[4.0]);
        assert_eq!(buf.delay_steps(), 2);
    }

    #[test]
    fn value_at_constant_segment_is_the_constant() {
        let buf = SegmentBuffer::constant(0.5, 0.1, &[3.5]).unwrap();
        assert_eq!(buf.value_at(-0.25).unwrap(), vec![3.5]);
    }

    #[test]
    fn value_at_interpolates_midpoint() {
        // m = 1, values [0, 1]: midpoint of the single interval is 0.5.
        let buf = scalar_buf(0.4, 0.4, &[0.0, 1.0]);
        assert!((buf.value_at(-0.2).unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn value_at_interpolates_between_interior_nodes() {
        // Values [1, 2, 4] on m = 2; theta = -0.25 τ sits halfway between
        // the nodes holding 2 and 4.
        let tau = 0.8;
        let buf = scalar_buf(tau, tau / 2.0, &[1.0, 2.0, 4.0]);
        assert!((buf.value_at(-0.25 * tau).unwrap()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn value_at_rejects_offsets_outside_window() {
        let buf = SegmentBuffer::constant(0.5, 0.1, &[0.0]).unwrap();
        assert!(matches!(
            buf.value_at(-0.6),
            Err(Error::ThetaOutOfRange { .. })
        ));
        assert!(matches!(
            buf.value_at(0.1),
            Err(Error::ThetaOutOfRange { .. })
        ));
    }

    proptest! {
        #[test]
        fn value_at_matches_closed_form_interpolation(
            values in proptest::collection::vec(-10.0f64..10.0, 2..12),
            frac in 0.0f64..1.0,
        ) {
            let m = values.len() - 1;
            let step = 0.125;
            let tau = step * m as f64;
            let buf = scalar_buf(tau, step, &values);
            let theta = -tau + frac * tau;
            let pos = (theta + tau) / step;
            let i = (pos.floor() as usize).min(m - 1);
            let t = pos - i as f64;
            let expected = values[i] + t * (values[i + 1] - values[i]);
            let got = buf.value_at(theta).unwrap()[0];
            prop_assert!((got - expected).abs() < 1e-9, "got {got}, expected {expected}");
        }

        #[test]
        fn delay_integral_is_exact_on_affine_segments(
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
            m in 1usize..20,
            k in 1usize..20,
        ) {
            let k = k.min(m);
            let step = 0.0625;
            let tau = step * m as f64;
            let span = step * k as f64;
            // φ(θ) = a + b θ; ∫_{-span}^0 φ = a·span - b·span²/2.
            let values: Vec<f64> = (0..=m).map(|i| {
                let theta = -tau + i as f64 * step;
                a + b * theta
            }).collect();
            let buf = scalar_buf(tau, step, &values);
            let expected = a * span - b * span * span / 2.0;
            let got = buf.distributed_delay_integral(span).unwrap()[0];
            prop_assert!((got - expected).abs() < 1e-10, "got {got}, expected {expected}");
        }
    }

    #[test]
    fn delay_integral_of_constant_one() {
        let buf = SegmentBuffer::constant(0.25, 0.05, &[1.0]).unwrap();
        assert!((buf.distributed_delay_integral(0.25).unwrap()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn delay_integral_of_zero_path() {
        let buf = SegmentBuffer::constant(0.5, 0.1, &[0.0]).unwrap();
        for span in [0.1, 0.3, 0.5] {
            assert_eq!(buf.distributed_delay_integral(span).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn delay_integral_linear_ramp() {
        // Linear from 0 at -span to 1 at 0 with span = 0.5: integral = 0.25.
        let buf = scalar_buf(0.5, 0.25, &[0.0, 0.5, 1.0]);
        assert!((buf.distributed_delay_integral(0.5).unwrap()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn delay_integral_rejects_misaligned_span() {
        let buf = SegmentBuffer::constant(0.25, 0.05, &[1.0]).unwrap();
        assert!(matches!(
            buf.distributed_delay_integral(0.12),
            Err(Error::MisalignedGrid { .. })
        ));
        assert!(buf.distributed_delay_integral(0.3).is_err());
    }

    #[test]
    fn example_drift_vanishes_at_origin() {
        let params = ExampleModelParams::default();
        let buf = SegmentBuffer::constant(0.25, 0.05, &[0.0]).unwrap();
        let mu = EmpiricalMeasure::dirac_zero(1);
        assert_eq!(example_drift(&params, &buf, &mu).unwrap(), 0.0);
    }

    #[test]
    fn example_drift_hand_values() {
        let params = ExampleModelParams::default();
        let buf = SegmentBuffer::constant(0.25, 0.05, &[1.0]).unwrap();
        let at_one = EmpiricalMeasure::dirac(&[1.0]);
        let at_zero = EmpiricalMeasure::dirac_zero(1);
        // -2 - 3 + (1/4)(1/4) + (1/2)·mean
        assert!((example_drift(&params, &buf, &at_one).unwrap() + 4.4375).abs() < 1e-15);
        assert!((example_drift(&params, &buf, &at_zero).unwrap() + 4.9375).abs() < 1e-15);
    }

    #[test]
    fn example_drift_rejects_wrong_dimension() {
        let params = ExampleModelParams::default();
        let buf = SegmentBuffer::constant(0.25, 0.05, &[1.0, 2.0]).unwrap();
        let mu = EmpiricalMeasure::dirac(&[1.0, 2.0]);
        assert!(matches!(
            example_drift(&params, &buf, &mu),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn example_model_satisfies_zero_equilibrium() {
        let model = ExampleModelParams::default().build().unwrap();
        assert!(model.vanishes_at_origin(0.05).unwrap());
    }

    #[test]
    fn model_functionals_are_pure() {
        let model = ExampleModelParams::default().build().unwrap();
        let buf = SegmentBuffer::constant(0.25, 0.05, &[0.7]).unwrap();
        let mu = EmpiricalMeasure::from_points(&[vec![0.3], vec![-0.1]]).unwrap();
        assert_eq!(model.drift(&buf, &mu), model.drift(&buf, &mu));
        assert_eq!(model.diffusion(&buf, &mu), model.diffusion(&buf, &mu));
        assert_eq!(
            model.common_diffusion(&buf, &mu),
            model.common_diffusion(&buf, &mu)
        );
    }
}
