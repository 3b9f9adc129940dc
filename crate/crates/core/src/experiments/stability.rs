//! Moment-stability estimation and Razumikhin-type certificates.
//!
//! The experiment estimates `E|X(t)|^q` by double averaging — over
//! independent common-noise replications and over the particles of each
//! system — and fits an exponential decay rate on the tail of the horizon.
//! A certificate `(λ, α, τ, q, c₁..c₄)` guarantees the one-sided bound
//!
//! ```text
//! E|X(t)|^q ≤ (c₃+c₄)/(c₁+c₂) · E‖ς‖^q · e^(-κt),   κ = min{λ, log(α)/τ},
//! ```
//!
//! so the empirical rate is tested against `κ` from below only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{ParticleSystem, RunOptions};
use crate::linalg::{linear_fit, norm};
use crate::model::{InitialData, ModelSpec};

/// Certified decay data: `E LV ≤ -λ E V` under the history condition with
/// factor `α`, delay `τ`, moment order `q`, and sandwich constants `c₁..c₄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Certificate {
    pub lambda: f64,
    pub alpha: f64,
    pub tau: f64,
    pub q: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl Certificate {
    /// The certified rate `min{λ, log(α)/τ}`.
    pub fn kappa(&self) -> f64 {
        self.lambda.min(self.alpha.ln() / self.tau)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("decay coefficient must be positive, got {}", self.lambda),
            });
        }
        if !(self.alpha > 1.0) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("history factor must exceed 1, got {}", self.alpha),
            });
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParameter {
                name: "tau",
                reason: format!("delay must be positive, got {}", self.tau),
            });
        }
        if !(self.q >= 1.0) {
            return Err(Error::InvalidParameter {
                name: "q",
                reason: format!("moment order must be >= 1, got {}", self.q),
            });
        }
        for (name, c) in [
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("c4", self.c4),
        ] {
            if !(c > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "certificate",
                    reason: format!("sandwich constant {name} must be positive, got {c}"),
                });
            }
        }
        Ok(())
    }
}

/// Configuration of one stability run.
#[derive(Debug, Clone, Serialize)]
pub struct StabilitySettings {
    pub n: usize,
    pub horizon: f64,
    pub dt: f64,
    pub replications: u64,
    /// Moment order being tracked.
    pub q: f64,
    pub record_stride: u64,
    /// Fraction of the horizon (from the end) used for the rate fit. The
    /// early transient carries the initial data, so the default fits the
    /// last 60 %.
    pub fit_window: f64,
    /// Slack subtracted from the certified rate in the confirmation test.
    pub tolerance: f64,
    /// Multiplicative slack allowed on the decay-envelope bound.
    pub envelope_slack: f64,
    pub certificate: Option<Certificate>,
}

impl StabilitySettings {
    pub fn new(n: usize, horizon: f64, dt: f64, q: f64) -> Self {
        Self {
            n,
            horizon,
            dt,
            replications: 1,
            q,
            record_stride: 1,
            fit_window: 0.6,
            tolerance: 0.05,
            envelope_slack: 0.1,
            certificate: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityVerdict {
    Stable,
    /// The moment track is identically zero; nothing to fit and nothing to
    /// violate.
    TriviallyStable,
    /// The fitted tail slope was non-negative. Not an error: the scale of
    /// `(N, T)` simply showed no decay.
    NotStableAtThisScale,
}

/// Certificate evaluation attached to a [`StabilityReport`].
#[derive(Debug, Clone, Serialize)]
pub struct CertificateCheck {
    pub certificate: Certificate,
    /// `min{λ, log(α)/τ}`.
    pub kappa_cert: f64,
    /// Whether `κ_emp ≥ κ_cert - tolerance` (vacuously true for an
    /// identically zero track).
    pub confirmed: bool,
    /// Whether the decay envelope held at every recorded time.
    pub envelope_ok: bool,
    pub envelope_slack: f64,
    /// Estimated `E‖ς‖^q` of the initial segments.
    pub initial_sup_norm_q: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub n: usize,
    pub q: f64,
    pub replications: u64,
    pub seed: u64,
    pub times: Vec<f64>,
    /// `E|X(t)|^q` estimate: mean over replications and particles.
    pub mean_moment: Vec<f64>,
    /// Per-replication moment tracks (same time grid).
    pub per_replication: Vec<Vec<f64>>,
    pub fit_window: f64,
    pub fit_points: usize,
    /// Fitted decay rate (negated tail slope of the log-moment). Absent for
    /// an identically zero track.
    pub kappa_emp: Option<f64>,
    pub verdict: StabilityVerdict,
    pub certificate: Option<CertificateCheck>,
}

/// Runs `replications` independent systems, estimates the `q`-th moment
/// decay, and checks the certificate when one is supplied.
pub fn stability_experiment(
    model: &ModelSpec,
    init: &InitialData,
    settings: &StabilitySettings,
    master_seed: u64,
) -> Result<StabilityReport> {
    if !(settings.fit_window > 0.0 && settings.fit_window <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "fit_window",
            reason: format!("must lie in (0, 1], got {}", settings.fit_window),
        });
    }
    if settings.replications == 0 {
        return Err(Error::InvalidParameter {
            name: "replications",
            reason: "need at least one replication".into(),
        });
    }
    if !(settings.q >= 1.0) {
        return Err(Error::InvalidParameter {
            name: "q",
            reason: format!("moment order must be >= 1, got {}", settings.q),
        });
    }
    if let Some(cert) = &settings.certificate {
        cert.validate()?;
        if !model.vanishes_at_origin(settings.dt)? {
            return Err(Error::InvalidParameter {
                name: "model",
                reason: "certificate checks require coefficients vanishing at (0, δ₀)".into(),
            });
        }
    }

    let options = RunOptions {
        record_stride: settings.record_stride.max(1),
        moments: vec![settings.q],
        path_particles: 0,
    };

    struct RepOutcome {
        times: Vec<f64>,
        track: Vec<f64>,
        initial_sup_q: f64,
    }

    let reps: Vec<RepOutcome> = (0..settings.replications)
        .into_par_iter()
        .map(|r| -> Result<RepOutcome> {
            let mut sys =
                ParticleSystem::new(model.clone(), settings.n, settings.dt, init, master_seed, r)?;
            let initial_sup_q = (0..settings.n)
                .map(|k| {
                    sys.buffer(k)
                        .nodes()
                        .map(norm)
                        .fold(0.0_f64, f64::max)
                        .powf(settings.q)
                })
                .sum::<f64>()
                / settings.n as f64;
            let record = sys.run(settings.horizon, &options)?;
            let track = record
                .moment_track(settings.q)
                .expect("requested moment is tracked")
                .to_vec();
            Ok(RepOutcome {
                times: record.times,
                track,
                initial_sup_q,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let times = reps[0].times.clone();
    let n_times = times.len();
    let mut mean_moment = vec![0.0; n_times];
    for rep in &reps {
        for (acc, v) in mean_moment.iter_mut().zip(&rep.track) {
            *acc += v;
        }
    }
    for v in &mut mean_moment {
        *v /= reps.len() as f64;
    }
    let initial_sup_norm_q =
        reps.iter().map(|r| r.initial_sup_q).sum::<f64>() / reps.len() as f64;

    // Tail fit of log E|X(t)|^q.
    let window_start = (1.0 - settings.fit_window) * settings.horizon;
    let in_window: Vec<(f64, f64)> = times
        .iter()
        .zip(&mean_moment)
        .filter(|(t, _)| **t >= window_start - 1e-12)
        .map(|(t, m)| (*t, *m))
        .collect();
    let trivially_zero = in_window.iter().all(|(_, m)| *m == 0.0);
    let positive: Vec<(f64, f64)> = in_window
        .iter()
        .filter(|(_, m)| *m > 0.0)
        .map(|(t, m)| (*t, m.ln()))
        .collect();

    let (kappa_emp, verdict, fit_points) = if trivially_zero {
        (None, StabilityVerdict::TriviallyStable, 0)
    } else {
        let xs: Vec<f64> = positive.iter().map(|(t, _)| *t).collect();
        let ys: Vec<f64> = positive.iter().map(|(_, l)| *l).collect();
        let (slope, _) = linear_fit(&xs, &ys).ok_or(Error::InvalidParameter {
            name: "fit_window",
            reason: "too few positive moment values in the fit window".into(),
        })?;
        let verdict = if slope < 0.0 {
            StabilityVerdict::Stable
        } else {
            StabilityVerdict::NotStableAtThisScale
        };
        (Some(-slope), verdict, xs.len())
    };

    let certificate = settings.certificate.as_ref().map(|cert| {
        let kappa_cert = cert.kappa();
        let confirmed = match kappa_emp {
            None => trivially_zero,
            Some(k) => k >= kappa_cert - settings.tolerance,
        };
        let prefactor = (cert.c3 + cert.c4) / (cert.c1 + cert.c2) * initial_sup_norm_q;
        let envelope_ok = times.iter().zip(&mean_moment).all(|(t, m)| {
            *m <= prefactor * (-kappa_cert * t).exp() * (1.0 + settings.envelope_slack)
        });
        CertificateCheck {
            certificate: *cert,
            kappa_cert,
            confirmed,
            envelope_ok,
            envelope_slack: settings.envelope_slack,
            initial_sup_norm_q,
        }
    });

    Ok(StabilityReport {
        n: settings.n,
        q: settings.q,
        replications: settings.replications,
        seed: master_seed,
        times,
        mean_moment,
        per_replication: reps.into_iter().map(|r| r.track).collect(),
        fit_window: settings.fit_window,
        fit_points,
        kappa_emp,
        verdict,
        certificate,
    })
}

/// Result of [`optimize_certificate`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OptimalCertificate {
    pub alpha: f64,
    pub kappa: f64,
}

/// Maximises `min{λ(α), log(α)/τ}` over `α > 1` for a continuous,
/// non-increasing `λ` with `λ(1⁺) > 0`.
///
/// The first argument of the min is non-increasing and the second strictly
/// increasing from 0, so the maximum sits at the crossing
/// `λ(α) = log(α)/τ`, located by bisection.
pub fn optimize_certificate(
    lambda_of_alpha: impl Fn(f64) -> f64,
    tau: f64,
) -> Result<OptimalCertificate> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: format!("delay must be positive, got {tau}"),
        });
    }
    let gap = |alpha: f64| lambda_of_alpha(alpha) - alpha.ln() / tau;
    let mut lo = 1.0 + 1e-12;
    if !(lambda_of_alpha(lo) > 0.0) {
        // λ is non-increasing, so non-positivity at 1⁺ rules out every α.
        return Err(Error::NoCertificate);
    }
    // Expand until the increasing branch dominates; log(α)/τ is unbounded
    // while λ stays below λ(1⁺), so this terminates.
    let mut hi = 2.0;
    while gap(hi) > 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::InvalidParameter {
                name: "lambda_of_alpha",
                reason: "crossing with log(alpha)/tau not found on a finite range".into(),
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let kappa = lambda_of_alpha(alpha).min(alpha.ln() / tau);
    if !(kappa > 0.0) {
        return Err(Error::NoCertificate);
    }
    Ok(OptimalCertificate { alpha, kappa })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SquareMatrix;
    use crate::measures::EmpiricalMeasure;
    use crate::model::{ExampleModelParams, SegmentBuffer};
    use std::sync::Arc;

    fn zero_model() -> ModelSpec {
        ModelSpec::new(
            1,
            0.0,
            Arc::new(|_: &SegmentBuffer, _: &EmpiricalMeasure| vec![0.0]),
            Arc::new(|_: &SegmentBuffer, _: &EmpiricalMeasure| SquareMatrix::zeros(1)),
            Arc::new(|_: &SegmentBuffer, _: &EmpiricalMeasure| SquareMatrix::zeros(1)),
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_model_from_zero_is_trivially_stable() {
        let settings = StabilitySettings::new(4, 0.5, 0.01, 2.0);
        let report = stability_experiment(
            &zero_model(),
            &InitialData::Constant(vec![0.0]),
            &settings,
            1,
        )
        .unwrap();
        assert_eq!(report.verdict, StabilityVerdict::TriviallyStable);
        assert!(report.kappa_emp.is_none());
        assert!(report.mean_moment.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn zero_model_from_nonzero_shows_no_decay() {
        let settings = StabilitySettings::new(4, 0.5, 0.01, 2.0);
        let report = stability_experiment(
            &zero_model(),
            &InitialData::Constant(vec![1.0]),
            &settings,
            1,
        )
        .unwrap();
        assert_eq!(report.verdict, StabilityVerdict::NotStableAtThisScale);
        assert_eq!(report.kappa_emp, Some(-0.0));
    }

    #[test]
    fn fitted_rate_is_invariant_under_initial_scaling_for_the_linear_model() {
        // With the cubic term removed the dynamics are linear, so scaling the
        // initial data by s shifts the log-moment by q·log(s) and leaves the
        // fitted slope unchanged.
        let params = ExampleModelParams {
            cubic_coeff: 0.0,
            ..ExampleModelParams::default()
        };
        let model = params.build().unwrap();
        let mut settings = StabilitySettings::new(32, 1.0, 0.01, 2.0);
        settings.replications = 2;
        let kappa_at = |s: f64| {
            stability_experiment(&model, &InitialData::Constant(vec![s]), &settings, 42)
                .unwrap()
                .kappa_emp
                .unwrap()
        };
        let base = kappa_at(1.0);
        for s in [0.5, 2.0] {
            let k = kappa_at(s);
            assert!(
                (k - base).abs() <= 1e-9 * base.abs().max(1.0),
                "scale {s}: {k} vs {base}"
            );
        }
    }

    #[test]
    fn log_moment_shifts_by_q_log_s_for_the_linear_model() {
        let params = ExampleModelParams {
            cubic_coeff: 0.0,
            ..ExampleModelParams::default()
        };
        let model = params.build().unwrap();
        let settings = StabilitySettings::new(16, 0.25, 0.005, 2.0);
        let track = |s: f64| {
            stability_experiment(&model, &InitialData::Constant(vec![s]), &settings, 7)
                .unwrap()
                .mean_moment
        };
        let base = track(1.0);
        let scaled = track(2.0);
        let shift = (2.0f64).powi(2);
        for (a, b) in base.iter().zip(&scaled) {
            assert!((b / a - shift).abs() < 1e-9, "ratio {} vs {shift}", b / a);
        }
    }

    #[test]
    fn certificate_requires_vanishing_coefficients() {
        // Constant drift does not vanish at the origin.
        let model = ModelSpec::new(
            1,
            0.0,
            Arc::new(|_: &SegmentBuffer, _: &EmpiricalMeasure| vec![1.0]),
            Arc::new(|_: &SegmentBuffer, _: &EmpiricalMeasure| SquareMatrix::zeros(1)),
            Arc::new(|_: &SegmentBuffer, _: &EmpiricalMeasure| SquareMatrix::zeros(1)),
            2.0,
        )
        .unwrap();
        let mut settings = StabilitySettings::new(2, 0.1, 0.01, 2.0);
        settings.certificate = Some(Certificate {
            lambda: 0.5,
            alpha: 1.2,
            tau: 0.25,
            q: 2.0,
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            c4: 1.0,
        });
        assert!(
            stability_experiment(&model, &InitialData::Constant(vec![0.0]), &settings, 1).is_err()
        );
    }

    #[test]
    fn certificate_kappa_degenerates_as_alpha_approaches_one() {
        // As α → 1⁺ the log(α)/τ arm of the min goes to zero.
        let cert = Certificate {
            lambda: 0.75,
            alpha: 1.0 + 1e-9,
            tau: 0.25,
            q: 2.0,
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            c4: 1.0,
        };
        assert!(cert.kappa() < 1e-8);
        assert!(cert.kappa() > 0.0);
    }

    #[test]
    fn optimize_certificate_constant_rate() {
        // λ ≡ λ₀: the min saturates at λ₀ once log(α)/τ catches up, so the
        // crossing sits at α* = e^(λ₀ τ).
        let got = optimize_certificate(|_| 0.5, 0.25).unwrap();
        assert!((got.kappa - 0.5).abs() < 1e-9);
        assert!((got.alpha - (0.5_f64 * 0.25).exp()).abs() < 1e-9);
    }

    #[test]
    fn optimize_certificate_affine_rate() {
        // λ(α) = 3/4 - α/64 with τ = 1/4; crossing solved independently by
        // high-precision root finding.
        let got = optimize_certificate(|a| 0.75 - a / 64.0, 0.25).unwrap();
        assert!(
            (got.alpha - 1.2005865257994275).abs() < 1e-9,
            "alpha* = {}",
            got.alpha
        );
        assert!(
            (got.kappa - 0.7312408355343839).abs() < 1e-9,
            "kappa* = {}",
            got.kappa
        );
        // The maximiser sits on the crossing.
        let residual = (0.75 - got.alpha / 64.0) - got.alpha.ln() / 0.25;
        assert!(residual.abs() <= 1e-8);
    }

    #[test]
    fn optimize_certificate_rejects_infeasible_rates() {
        assert!(matches!(
            optimize_certificate(|_| -1.0, 0.25),
            Err(Error::NoCertificate)
        ));
    }
}
