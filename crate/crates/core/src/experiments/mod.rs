//! Experiment pipelines: chaos-rate estimation against a proxy-limit
//! reference system, moment-stability fitting with certificate checking, and
//! Monte Carlo evaluation of the measure-dependent generator applied to a
//! Lyapunov function.

pub mod chaos;
pub mod lyapunov;
pub mod stability;

pub use chaos::{chaos_experiment, ChaosReport, ChaosSettings, ChaosSizeResult};
pub use lyapunov::{
    lv_estimate, razumikhin_check, LvEstimate, LyapunovSpec, RazumikhinParams, RazumikhinReport,
};
pub use stability::{
    optimize_certificate, stability_experiment, Certificate, CertificateCheck, OptimalCertificate,
    StabilityReport, StabilitySettings, StabilityVerdict,
};
