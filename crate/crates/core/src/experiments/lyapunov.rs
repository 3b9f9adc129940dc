//! Lyapunov functions of state and measure, Monte Carlo evaluation of the
//! generator applied to them, and the delayed drift-condition check.
//!
//! For `V(x, μ, t)` smooth in the state and twice L-differentiable in the
//! measure, the generator along the equation reads
//!
//! ```text
//! LV(φ, μ, t) = ∂ₜV + ∂ₓV·f(φ,μ)
//!             + ½ tr(∂ₓₓV g gᵀ) + ½ tr(∂ₓₓV g⁰ g⁰ᵀ)
//!             + E₁[ ∂_μV(y₁)·f(φ₁,μ)
//!                 + tr(∂ₓ∂_μV(y₁) g⁰(φ,μ) g⁰(φ₁,μ)ᵀ)
//!                 + ½ tr(∂_y∂_μV(y₁) g(φ₁,μ) g(φ₁,μ)ᵀ)
//!                 + ½ tr(∂_y∂_μV(y₁) g⁰(φ₁,μ) g⁰(φ₁,μ)ᵀ)
//!                 + ½ E₂[ tr(∂²_μV(y₁,y₂) g⁰(φ₁,μ) g⁰(φ₂,μ)ᵀ) ] ]
//! ```
//!
//! where `(φ₁, y₁)` and `(φ₂, y₂)` are independent copies of the segment and
//! its current value. Conditionally on the common noise the particles of one
//! system are exchangeable, so the copies are realised by within-system
//! resampling: copy one averages over all particles `j ≠ k`, copy two over
//! all `j' ∉ {k, j}`, both against the same empirical measure. The resampling
//! bias is part of the finite-N error budget alongside the empirical measure
//! itself.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::ParticleSystem;
use crate::linalg::{dot, norm, trace_h_a_bt, SquareMatrix};
use crate::measures::{moment, EmpiricalMeasure};
use crate::model::ModelSpec;

pub type ValueFn = Arc<dyn Fn(&[f64], &EmpiricalMeasure, f64) -> f64 + Send + Sync>;
pub type TimeDerivFn = Arc<dyn Fn(&[f64], &EmpiricalMeasure, f64) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64], &EmpiricalMeasure, f64) -> Vec<f64> + Send + Sync>;
pub type HessianFn = Arc<dyn Fn(&[f64], &EmpiricalMeasure, f64) -> SquareMatrix + Send + Sync>;
/// Measure derivative `∂_μV(x, μ, t)(y)`.
pub type MeasureGradFn =
    Arc<dyn Fn(&[f64], &EmpiricalMeasure, f64, &[f64]) -> Vec<f64> + Send + Sync>;
/// `∂ₓ∂_μV(x, μ, t)(y)` or `∂_y∂_μV(x, μ, t)(y)`.
pub type MeasureMixedFn =
    Arc<dyn Fn(&[f64], &EmpiricalMeasure, f64, &[f64]) -> SquareMatrix + Send + Sync>;
/// Second measure derivative `∂²_μV(x, μ, t)(y, z)`.
pub type MeasurePairFn =
    Arc<dyn Fn(&[f64], &EmpiricalMeasure, f64, &[f64], &[f64]) -> SquareMatrix + Send + Sync>;

/// A derivative callback slot.
///
/// `Zero` is a provided derivative that is identically zero — the estimator
/// may skip the term. `Missing` makes any term that needs the derivative
/// fail with a specification error.
#[derive(Clone, Default)]
pub enum Deriv<F> {
    #[default]
    Missing,
    Zero,
    Provided(F),
}

impl<F> Deriv<F> {
    fn get(&self, derivative: &'static str, term: &'static str) -> Result<Option<&F>> {
        match self {
            Deriv::Missing => Err(Error::MissingDerivative { derivative, term }),
            Deriv::Zero => Ok(None),
            Deriv::Provided(f) => Ok(Some(f)),
        }
    }
}

/// A Lyapunov function together with the derivative callbacks the generator
/// needs.
#[derive(Clone)]
pub struct LyapunovSpec {
    pub name: String,
    pub value: ValueFn,
    pub d_t: Deriv<TimeDerivFn>,
    pub d_x: Deriv<GradientFn>,
    pub d_xx: Deriv<HessianFn>,
    pub d_mu: Deriv<MeasureGradFn>,
    pub d_x_d_mu: Deriv<MeasureMixedFn>,
    pub d_y_d_mu: Deriv<MeasureMixedFn>,
    pub d_mu2: Deriv<MeasurePairFn>,
}

impl LyapunovSpec {
    pub fn value(&self, x: &[f64], mu: &EmpiricalMeasure, t: f64) -> f64 {
        (self.value)(x, mu, t)
    }

    /// `V(x, μ) = |x|² + ∫|z|² μ(dz)`, the workhorse mean-square Lyapunov
    /// function. Sandwiched by `|x|^q + W_q^q(μ, δ₀)` on both sides with all
    /// four constants equal to one (`q = 2`).
    pub fn quadratic_mean_square() -> Self {
        Self {
            name: "quadratic-mean-square".into(),
            value: Arc::new(|x, mu, _| dot(x, x) + moment(mu, 2.0)),
            d_t: Deriv::Zero,
            d_x: Deriv::Provided(Arc::new(|x: &[f64], _: &EmpiricalMeasure, _| {
                x.iter().map(|v| 2.0 * v).collect()
            })),
            d_xx: Deriv::Provided(Arc::new(|x: &[f64], _: &EmpiricalMeasure, _| {
                SquareMatrix::scaled_identity(x.len(), 2.0)
            })),
            d_mu: Deriv::Provided(Arc::new(|_: &[f64], _: &EmpiricalMeasure, _, y: &[f64]| {
                y.iter().map(|v| 2.0 * v).collect()
            })),
            d_x_d_mu: Deriv::Zero,
            d_y_d_mu: Deriv::Provided(Arc::new(|x: &[f64], _: &EmpiricalMeasure, _, _: &[f64]| {
                SquareMatrix::scaled_identity(x.len(), 2.0)
            })),
            d_mu2: Deriv::Zero,
        }
    }
}

/// Monte Carlo estimate of `E LV` over the current particle configuration.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LvEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Evaluates the generator applied to `lyap` at the system's current time,
/// averaging the per-particle values `LV(X^k_t, μ̂, t)` over `k` and the
/// independent copies over the other particles.
///
/// Returns the sample mean and its standard error across particles.
pub fn lv_estimate(
    model: &ModelSpec,
    lyap: &LyapunovSpec,
    sys: &ParticleSystem,
) -> Result<LvEstimate> {
    let n = sys.n_particles();
    let t = sys.time();
    let mu = sys.measure();
    let dim = model.dim();

    // Coefficients are functionals of the full segment; evaluate once per
    // particle against the frozen measure.
    let coeffs: Vec<(Vec<f64>, SquareMatrix, SquareMatrix)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let buf = sys.buffer(j);
            (
                model.drift(buf, &mu),
                model.diffusion(buf, &mu),
                model.common_diffusion(buf, &mu),
            )
        })
        .collect();

    // Resolve every callback up front so a missing one fails before any work.
    let d_t = lyap.d_t.get("d_t", "time-derivative")?;
    let d_x = lyap.d_x.get("d_x", "state-gradient drift")?;
    let d_xx = lyap.d_xx.get("d_xx", "state-Hessian diffusion")?;
    let d_mu = lyap.d_mu.get("d_mu", "measure-gradient copy drift")?;
    let d_x_d_mu = lyap.d_x_d_mu.get("d_x_d_mu", "state-measure cross diffusion")?;
    let d_y_d_mu = lyap.d_y_d_mu.get("d_y_d_mu", "copy diffusion")?;
    let d_mu2 = lyap.d_mu2.get("d_mu2", "measure-measure pair diffusion")?;

    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|k| {
            let x_k = sys.state(k);
            let (_, g_k, g0_k) = &coeffs[k];
            let mut lv = 0.0;
            if let Some(f) = d_t {
                lv += f(x_k, &mu, t);
            }
            if let Some(f) = d_x {
                let grad = f(x_k, &mu, t);
                assert_eq!(grad.len(), dim, "d_x returned wrong dimension");
                lv += dot(&grad, &coeffs[k].0);
            }
            if let Some(f) = d_xx {
                let hess = f(x_k, &mu, t);
                lv += 0.5 * trace_h_a_bt(&hess, g_k, g_k);
                lv += 0.5 * trace_h_a_bt(&hess, g0_k, g0_k);
            }

            // Copy one: all particles j ≠ k (the particle itself when alone).
            let copy1: Vec<usize> = if n == 1 {
                vec![k]
            } else {
                (0..n).filter(|&j| j != k).collect()
            };
            let mut copy_acc = 0.0;
            for &j in &copy1 {
                let y_j = sys.state(j);
                let (f_j, g_j, g0_j) = &coeffs[j];
                if let Some(f) = d_mu {
                    copy_acc += dot(&f(x_k, &mu, t, y_j), f_j);
                }
                if let Some(f) = d_x_d_mu {
                    copy_acc += trace_h_a_bt(&f(x_k, &mu, t, y_j), g0_k, g0_j);
                }
                if let Some(f) = d_y_d_mu {
                    let mixed = f(x_k, &mu, t, y_j);
                    copy_acc += 0.5 * trace_h_a_bt(&mixed, g_j, g_j);
                    copy_acc += 0.5 * trace_h_a_bt(&mixed, g0_j, g0_j);
                }
                if let Some(f) = d_mu2 {
                    // Copy two: all particles outside {k, j}, falling back to
                    // the first copy when no third particle exists.
                    let copy2: Vec<usize> = if n <= 2 {
                        vec![j]
                    } else {
                        (0..n).filter(|&jj| jj != k && jj != j).collect()
                    };
                    let mut pair_acc = 0.0;
                    for &jj in &copy2 {
                        let (_, _, g0_jj) = &coeffs[jj];
                        pair_acc +=
                            trace_h_a_bt(&f(x_k, &mu, t, y_j, sys.state(jj)), g0_j, g0_jj);
                    }
                    copy_acc += 0.5 * pair_acc / copy2.len() as f64;
                }
            }
            lv + copy_acc / copy1.len() as f64
        })
        .collect();

    let mean = values.iter().sum::<f64>() / n as f64;
    let std_error = if n > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Ok(LvEstimate { mean, std_error })
}

/// Parameters of the delayed drift-condition check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RazumikhinParams {
    /// History-domination factor; the condition is only consulted where the
    /// recent past stays below `alpha` times the present value.
    pub alpha: f64,
    /// Required decay coefficient in `E LV ≤ -λ E V`.
    pub lambda: f64,
    /// Moment order of the sandwich bounds.
    pub q: f64,
    /// Sandwich constants `c₁..c₄` in
    /// `c₁|x|^q + c₂W_q^q(μ,δ₀) ≤ V ≤ c₃|x|^q + c₄W_q^q(μ,δ₀)`.
    pub c: [f64; 4],
}

/// One check time of a [`RazumikhinReport`].
#[derive(Debug, Clone, Serialize)]
pub struct RazumikhinPoint {
    pub time: f64,
    /// `V̂(0)`: mean Lyapunov value of the current states.
    pub v_current: f64,
    /// Largest `V̂(θ)` over the segment grid.
    pub v_history_max: f64,
    /// Whether the history condition `max_θ V̂(θ) < α V̂(0)` holds here. The
    /// drift condition imposes nothing at inactive times.
    pub condition_active: bool,
    pub lv: Option<f64>,
    pub std_error: Option<f64>,
    /// `-λ V̂(0) + 3·s.e.`, the statistically slack threshold.
    pub threshold: Option<f64>,
    pub pass: Option<bool>,
    /// `threshold - lv`; non-negative means pass.
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RazumikhinReport {
    pub params: RazumikhinParams,
    pub points: Vec<RazumikhinPoint>,
    pub active_count: usize,
    /// Fraction of active times where the drift condition held (1 when no
    /// time was active — the condition is vacuous there).
    pub pass_fraction: f64,
    pub worst_margin: Option<f64>,
    /// Whether the sandwich bounds held at every checked state.
    pub sandwich_ok: bool,
}

/// Evaluates the drift condition along recorded system snapshots (each with
/// full segments), testing `lv ≤ -λ V̂(0) + 3·s.e.` wherever the empirical
/// history condition `max_θ V̂(θ) < α V̂(0)` is active.
pub fn razumikhin_check(
    model: &ModelSpec,
    lyap: &LyapunovSpec,
    snapshots: &[ParticleSystem],
    params: &RazumikhinParams,
) -> Result<RazumikhinReport> {
    if !(params.alpha > 1.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: format!("history factor must exceed 1, got {}", params.alpha),
        });
    }
    if !(params.q >= 1.0) {
        return Err(Error::InvalidParameter {
            name: "q",
            reason: format!("moment order must be >= 1, got {}", params.q),
        });
    }
    if params.c.iter().any(|&c| !(c > 0.0)) {
        return Err(Error::InvalidParameter {
            name: "c",
            reason: "sandwich constants must be positive".into(),
        });
    }

    let mut points = Vec::with_capacity(snapshots.len());
    let mut active_count = 0usize;
    let mut passed = 0usize;
    let mut worst_margin: Option<f64> = None;
    let mut sandwich_ok = true;

    for sys in snapshots {
        let t = sys.time();
        let n = sys.n_particles();
        let m = sys.buffer(0).delay_steps();
        let dt = sys.dt();

        // Mean Lyapunov value on each segment node, against the empirical
        // measure of that node's states.
        let mut v_nodes = Vec::with_capacity(m + 1);
        for i in 0..=m {
            let theta = -((m - i) as f64) * dt;
            let states: Vec<Vec<f64>> = (0..n).map(|k| sys.buffer(k).node(i).to_vec()).collect();
            let mu_i = EmpiricalMeasure::from_points(&states)?;
            let v = states
                .iter()
                .map(|x| lyap.value(x, &mu_i, t + theta))
                .sum::<f64>()
                / n as f64;
            v_nodes.push(v);
        }
        let v_current = v_nodes[m];
        let v_history_max = v_nodes.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let active = v_history_max < params.alpha * v_current;

        // Sandwich bounds at the current states.
        let mu = sys.measure();
        let wqq = moment(&mu, params.q);
        for k in 0..n {
            let x = sys.state(k);
            let v = lyap.value(x, &mu, t);
            let xq = norm(x).powf(params.q);
            let lower = params.c[0] * xq + params.c[1] * wqq;
            let upper = params.c[2] * xq + params.c[3] * wqq;
            let tol = 1e-9 * v.abs().max(1.0);
            if v < lower - tol || v > upper + tol {
                sandwich_ok = false;
            }
        }

        let point = if active {
            active_count += 1;
            let estimate = lv_estimate(model, lyap, sys)?;
            let threshold = -params.lambda * v_current + 3.0 * estimate.std_error;
            let margin = threshold - estimate.mean;
            let pass = margin >= 0.0;
            if pass {
                passed += 1;
            }
            worst_margin = Some(worst_margin.map_or(margin, |w: f64| w.min(margin)));
            RazumikhinPoint {
                time: t,
                v_current,
                v_history_max,
                condition_active: true,
                lv: Some(estimate.mean),
                std_error: Some(estimate.std_error),
                threshold: Some(threshold),
                pass: Some(pass),
                margin: Some(margin),
            }
        } else {
            RazumikhinPoint {
                time: t,
                v_current,
                v_history_max,
                condition_active: false,
                lv: None,
                std_error: None,
                threshold: None,
                pass: None,
                margin: None,
            }
        };
        points.push(point);
    }

    let pass_fraction = if active_count == 0 {
        1.0
    } else {
        passed as f64 / active_count as f64
    };
    Ok(RazumikhinReport {
        params: *params,
        points,
        active_count,
        pass_fraction,
        worst_margin,
        sandwich_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ExampleModelParams, InitialData, SegmentBuffer};
    use std::sync::Arc;

    fn deterministic_contraction() -> ModelSpec {
        ModelSpec::new(
            1,
            0.0,
            Arc::new(|buf: &SegmentBuffer, _: &EmpiricalMeasure| vec![-buf.current()[0]]),
            Arc::new(|_: &SegmentBuffer, _: &EmpiricalMeasure| SquareMatrix::zeros(1)),
            Arc::new(|_: &SegmentBuffer, _: &EmpiricalMeasure| SquareMatrix::zeros(1)),
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn lv_vanishes_when_everything_sits_at_the_origin() {
        let model = ExampleModelParams::default().build().unwrap();
        let lyap = LyapunovSpec::quadratic_mean_square();
        let init = InitialData::Constant(vec![0.0]);
        let sys = ParticleSystem::new(model.clone(), 8, 0.005, &init, 1, 0).unwrap();
        let est = lv_estimate(&model, &lyap, &sys).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn lv_deterministic_single_particle_hand_value() {
        // f = -x, g = g⁰ = 0, state 1: the state-gradient term gives
        // 2·1·(-1) and the copy drift term (copy = the same state) another
        // 2·1·(-1), so LV = -4.
        let model = deterministic_contraction();
        let lyap = LyapunovSpec::quadratic_mean_square();
        let init = InitialData::Constant(vec![1.0]);
        let sys = ParticleSystem::new(model.clone(), 1, 0.01, &init, 1, 0).unwrap();
        let est = lv_estimate(&model, &lyap, &sys).unwrap();
        assert!((est.mean + 4.0).abs() < 1e-10, "LV = {}", est.mean);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn lv_with_identical_particles_matches_single_particle_value() {
        let model = deterministic_contraction();
        let lyap = LyapunovSpec::quadratic_mean_square();
        let init = InitialData::Constant(vec![1.0]);
        let sys = ParticleSystem::new(model.clone(), 12, 0.01, &init, 1, 0).unwrap();
        let est = lv_estimate(&model, &lyap, &sys).unwrap();
        assert!((est.mean + 4.0).abs() < 1e-10);
        assert!(est.std_error.abs() < 1e-12);
    }

    #[test]
    fn missing_derivative_is_reported_by_term() {
        let model = deterministic_contraction();
        let mut lyap = LyapunovSpec::quadratic_mean_square();
        lyap.d_mu = Deriv::Missing;
        let init = InitialData::Constant(vec![1.0]);
        let sys = ParticleSystem::new(model.clone(), 2, 0.01, &init, 1, 0).unwrap();
        match lv_estimate(&model, &lyap, &sys) {
            Err(Error::MissingDerivative { derivative, .. }) => assert_eq!(derivative, "d_mu"),
            other => panic!("expected missing-derivative error, got {other:?}"),
        }
    }

    #[test]
    fn builtin_lyapunov_is_sandwiched_with_unit_constants() {
        let lyap = LyapunovSpec::quadratic_mean_square();
        let mut state = 0xdead_beef_u64;
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        for _ in 0..50 {
            let points: Vec<Vec<f64>> = (0..7).map(|_| vec![next(), next()]).collect();
            let mu = EmpiricalMeasure::from_points(&points).unwrap();
            let x = vec![next(), next()];
            let v = lyap.value(&x, &mu, 0.0);
            let bound = norm(&x).powi(2) + moment(&mu, 2.0);
            assert!((v - bound).abs() <= 1e-12 * bound.max(1.0));
        }
    }

    #[test]
    fn razumikhin_zero_trajectory_is_inactive_everywhere() {
        let model = ExampleModelParams::default().build().unwrap();
        let lyap = LyapunovSpec::quadratic_mean_square();
        let init = InitialData::Constant(vec![0.0]);
        let mut sys = ParticleSystem::new(model.clone(), 4, 0.005, &init, 1, 0).unwrap();
        let mut snaps = vec![sys.clone()];
        for _ in 0..3 {
            for _ in 0..20 {
                sys.step().unwrap();
            }
            snaps.push(sys.clone());
        }
        let report = razumikhin_check(
            &model,
            &lyap,
            &snaps,
            &RazumikhinParams {
                alpha: 1.2,
                lambda: 0.7,
                q: 2.0,
                c: [1.0; 4],
            },
        )
        .unwrap();
        assert_eq!(report.active_count, 0);
        assert_eq!(report.pass_fraction, 1.0);
        assert!(report.sandwich_ok);
    }

    #[test]
    fn razumikhin_separates_plausible_from_absurd_decay_requirements() {
        // Along a trajectory decaying at rate κ the history ratio sits near
        // e^(κτ), so a generous α keeps the condition active; λ = 1000 must
        // then be falsified at every active time while a mild λ passes.
        let model = ExampleModelParams::default().build().unwrap();
        let lyap = LyapunovSpec::quadratic_mean_square();
        let init = InitialData::Constant(vec![1.0]);
        let mut sys = ParticleSystem::new(model.clone(), 64, 0.005, &init, 3, 0).unwrap();
        let mut snaps = Vec::new();
        for _ in 0..10 {
            for _ in 0..20 {
                sys.step().unwrap();
            }
            snaps.push(sys.clone());
        }
        let check = |lambda: f64| {
            razumikhin_check(
                &model,
                &lyap,
                &snaps,
                &RazumikhinParams {
                    alpha: 3.0,
                    lambda,
                    q: 2.0,
                    c: [1.0; 4],
                },
            )
            .unwrap()
        };
        let absurd = check(1000.0);
        assert!(absurd.active_count > 0, "expected active check times");
        assert!(
            absurd.pass_fraction < 0.2,
            "absurd lambda passed with fraction {}",
            absurd.pass_fraction
        );
        let mild = check(0.2);
        assert_eq!(mild.active_count, absurd.active_count);
        assert!(
            mild.pass_fraction > 0.9,
            "mild lambda failed with fraction {}",
            mild.pass_fraction
        );
    }

    #[test]
    fn razumikhin_confirms_the_certified_example_parameters() {
        // α = 1.19, λ = 3/4 - α/64: the certified pair for this model. Along
        // a fast-decaying trajectory the history condition is rarely active
        // (the recent past exceeds α times the present), but wherever it is,
        // the drift condition must hold; the pass fraction stays 1.
        let model = ExampleModelParams::default().build().unwrap();
        let lyap = LyapunovSpec::quadratic_mean_square();
        let init = InitialData::Constant(vec![1.0]);
        let mut sys = ParticleSystem::new(model.clone(), 256, 0.005, &init, 17, 0).unwrap();
        let mut snaps = Vec::new();
        for _ in 0..20 {
            for _ in 0..20 {
                sys.step().unwrap();
            }
            snaps.push(sys.clone());
        }
        let alpha = 1.19;
        let report = razumikhin_check(
            &model,
            &lyap,
            &snaps,
            &RazumikhinParams {
                alpha,
                lambda: 0.75 - alpha / 64.0,
                q: 2.0,
                c: [1.0; 4],
            },
        )
        .unwrap();
        assert_eq!(
            report.pass_fraction, 1.0,
            "certified parameters falsified at {} of {} active times",
            report.active_count as f64 * (1.0 - report.pass_fraction),
            report.active_count
        );
        assert!(report.sandwich_ok);
    }

    #[test]
    fn razumikhin_validates_parameters() {
        let model = ExampleModelParams::default().build().unwrap();
        let lyap = LyapunovSpec::quadratic_mean_square();
        let bad = RazumikhinParams {
            alpha: 1.0,
            lambda: 0.5,
            q: 2.0,
            c: [1.0; 4],
        };
        assert!(razumikhin_check(&model, &lyap, &[], &bad).is_err());
    }
}
