//! Run configuration: a single JSON document, fully validated before any
//! compute starts.
//!
//! Unknown keys are rejected, every cross-field constraint is checked up
//! front, and each failure names the offending key. The seed is mandatory —
//! there is no wall-clock default, a run must be reproducible from its
//! config alone.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use mvsfde_core::experiments::Certificate;
use mvsfde_core::{grid_steps, ExampleModelParams, RateParams};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config is not a valid JSON document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("`{key}`: {message}")]
    Invalid { key: &'static str, message: String },
}

fn invalid(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Chaos,
    Stability,
    LvCheck,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Chaos => "chaos",
            Self::Stability => "stability",
            Self::LvCheck => "lv-check",
        }
    }
}

/// Model selection: the built-in example family, or a custom model
/// registered by name in embedding code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Example {
        #[serde(default)]
        params: ExampleModelParams,
        /// Constant initial state (one value per component).
        #[serde(default = "default_initial")]
        initial: Vec<f64>,
    },
    Custom {
        name: String,
        #[serde(default)]
        initial: Option<Vec<f64>>,
    },
}

fn default_initial() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    pub dt: f64,
    pub horizon: f64,
    pub n: usize,
    #[serde(default = "one_u64")]
    pub replications: u64,
    #[serde(default = "one_u64")]
    pub record_stride: u64,
    /// Number of leading particles whose paths go into the CSV.
    #[serde(default)]
    pub record_paths: usize,
}

fn one_u64() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub emit_csv: bool,
    pub emit_json: bool,
    pub emit_svg: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            emit_csv: true,
            emit_json: true,
            emit_svg: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub moments: Vec<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { moments: vec![2.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosConfig {
    pub sizes: Vec<usize>,
    pub reference_size: usize,
    #[serde(default = "two")]
    pub q: f64,
    pub rate: RateParams,
    /// Optional verdict gate on the fitted log-log slope of `err_sup`.
    #[serde(default)]
    pub slope_range: Option<(f64, f64)>,
}

fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub q: f64,
    /// Fraction of the horizon (from the end) used for the rate fit.
    pub fit_window: f64,
    /// Slack subtracted from the certified rate when confirming.
    pub tolerance: f64,
    /// Multiplicative slack on the decay-envelope bound.
    pub envelope_slack: f64,
    pub certificate: Option<Certificate>,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            q: 2.0,
            fit_window: 0.6,
            tolerance: 0.05,
            envelope_slack: 0.1,
            certificate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LvCheckConfig {
    pub alpha: f64,
    pub lambda: f64,
    #[serde(default = "two")]
    pub q: f64,
    #[serde(default = "unit_constants")]
    pub c: [f64; 4],
    /// Number of evenly spaced check times in `(0, horizon]`.
    #[serde(default = "twenty")]
    pub check_times: u64,
    /// Verdict gate on the pass fraction among active times.
    #[serde(default = "one_f64")]
    pub min_pass_fraction: f64,
}

fn unit_constants() -> [f64; 4] {
    [1.0; 4]
}

fn twenty() -> u64 {
    20
}

fn one_f64() -> f64 {
    1.0
}

/// One experiment run, fully described.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub model: ModelConfig,
    pub numerics: Numerics,
    pub seed: u64,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub chaos: Option<ChaosConfig>,
    #[serde(default)]
    pub stability: Option<StabilityConfig>,
    #[serde(default)]
    pub lv_check: Option<LvCheckConfig>,
}

/// Parses and fully validates a JSON config document.
pub fn parse_config(document: &str) -> Result<RunConfig, ConfigError> {
    let config: RunConfig = serde_json::from_str(document)?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = &self.numerics;
        if !(n.dt > 0.0 && n.dt.is_finite()) {
            return Err(invalid("numerics.dt", "step size must be positive and finite"));
        }
        if !(n.horizon >= 0.0 && n.horizon.is_finite()) {
            return Err(invalid("numerics.horizon", "horizon must be non-negative"));
        }
        if grid_steps(n.horizon, n.dt).is_none() {
            return Err(invalid("numerics.horizon", "dt must divide horizon"));
        }
        if n.n == 0 {
            return Err(invalid("numerics.n", "need at least one particle"));
        }
        if n.replications == 0 {
            return Err(invalid("numerics.replications", "need at least one replication"));
        }
        if n.record_stride == 0 {
            return Err(invalid("numerics.record_stride", "stride must be positive"));
        }

        if let ModelConfig::Example { params, initial } = &self.model {
            if !(params.delay_span > 0.0) {
                return Err(invalid("model.params.delay_span", "delay span must be positive"));
            }
            match grid_steps(params.delay_span, n.dt) {
                Some(k) if k >= 1 => {}
                _ => {
                    return Err(invalid("model.params.delay_span", "dt must divide delay_span"));
                }
            }
            if initial.len() != 1 {
                return Err(invalid(
                    "model.initial",
                    format!("example model is scalar; got {} components", initial.len()),
                ));
            }
        }

        // Exactly the block matching the experiment may be present.
        let blocks: [(&'static str, bool, ExperimentKind); 4] = [
            ("simulate", self.simulate.is_some(), ExperimentKind::Simulate),
            ("chaos", self.chaos.is_some(), ExperimentKind::Chaos),
            ("stability", self.stability.is_some(), ExperimentKind::Stability),
            ("lv_check", self.lv_check.is_some(), ExperimentKind::LvCheck),
        ];
        for (key, present, kind) in blocks {
            if present && kind != self.experiment {
                return Err(ConfigError::Invalid {
                    key: match key {
                        "simulate" => "simulate",
                        "chaos" => "chaos",
                        "stability" => "stability",
                        _ => "lv_check",
                    },
                    message: format!(
                        "block does not match experiment `{}`",
                        self.experiment.name()
                    ),
                });
            }
        }

        match self.experiment {
            ExperimentKind::Simulate => {
                let block = self.simulate.clone().unwrap_or_default();
                if block.moments.is_empty() {
                    return Err(invalid("simulate.moments", "need at least one moment order"));
                }
                if block.moments.iter().any(|&q| !(q >= 1.0)) {
                    return Err(invalid("simulate.moments", "moment orders must be >= 1"));
                }
                if self.numerics.replications != 1 {
                    return Err(invalid(
                        "numerics.replications",
                        "simulate runs a single replication",
                    ));
                }
            }
            ExperimentKind::Chaos => {
                let block = self
                    .chaos
                    .as_ref()
                    .ok_or_else(|| invalid("chaos", "chaos experiments need a `chaos` block"))?;
                if block.sizes.is_empty() {
                    return Err(invalid("chaos.sizes", "need at least one size"));
                }
                if block.sizes.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(invalid("chaos.sizes", "sizes must be strictly ascending"));
                }
                if block.sizes[0] < 2 {
                    return Err(invalid("chaos.sizes", "every size must be at least 2"));
                }
                let max = *block.sizes.last().expect("non-empty");
                if block.reference_size < 4 * max {
                    return Err(invalid(
                        "chaos.reference_size",
                        format!(
                            "reference size must be at least 4x the largest size ({})",
                            4 * max
                        ),
                    ));
                }
                if !(block.q >= 1.0) {
                    return Err(invalid("chaos.q", "moment order must be >= 1"));
                }
                if let Some((lo, hi)) = block.slope_range {
                    if !(lo <= hi) {
                        return Err(invalid("chaos.slope_range", "range must satisfy lo <= hi"));
                    }
                }
            }
            ExperimentKind::Stability => {
                let block = self.stability.clone().unwrap_or_default();
                if !(block.q >= 1.0) {
                    return Err(invalid("stability.q", "moment order must be >= 1"));
                }
                if !(block.fit_window > 0.0 && block.fit_window <= 1.0) {
                    return Err(invalid("stability.fit_window", "must lie in (0, 1]"));
                }
                if !(block.tolerance >= 0.0) {
                    return Err(invalid("stability.tolerance", "must be non-negative"));
                }
                if !(block.envelope_slack >= 0.0) {
                    return Err(invalid("stability.envelope_slack", "must be non-negative"));
                }
                if let Some(cert) = &block.certificate {
                    if !(cert.lambda > 0.0) {
                        return Err(invalid("stability.certificate.lambda", "must be positive"));
                    }
                    if !(cert.alpha > 1.0) {
                        return Err(invalid("stability.certificate.alpha", "must exceed 1"));
                    }
                    if !(cert.tau > 0.0) {
                        return Err(invalid("stability.certificate.tau", "must be positive"));
                    }
                    if !(cert.q >= 1.0) {
                        return Err(invalid("stability.certificate.q", "must be >= 1"));
                    }
                    if [cert.c1, cert.c2, cert.c3, cert.c4]
                        .iter()
                        .any(|&c| !(c > 0.0))
                    {
                        return Err(invalid(
                            "stability.certificate",
                            "sandwich constants c1..c4 must be positive",
                        ));
                    }
                }
            }
            ExperimentKind::LvCheck => {
                let block = self
                    .lv_check
                    .as_ref()
                    .ok_or_else(|| invalid("lv_check", "lv-check experiments need an `lv_check` block"))?;
                if !(block.alpha > 1.0) {
                    return Err(invalid("lv_check.alpha", "history factor must exceed 1"));
                }
                if !block.lambda.is_finite() {
                    return Err(invalid("lv_check.lambda", "must be finite"));
                }
                if !(block.q >= 1.0) {
                    return Err(invalid("lv_check.q", "moment order must be >= 1"));
                }
                if block.c.iter().any(|&c| !(c > 0.0)) {
                    return Err(invalid("lv_check.c", "sandwich constants must be positive"));
                }
                if block.check_times == 0 {
                    return Err(invalid("lv_check.check_times", "need at least one check time"));
                }
                if !(0.0..=1.0).contains(&block.min_pass_fraction) {
                    return Err(invalid("lv_check.min_pass_fraction", "must lie in [0, 1]"));
                }
                let steps = grid_steps(n.horizon, n.dt).expect("checked above");
                if steps == 0 || !steps.is_multiple_of(block.check_times) {
                    return Err(invalid(
                        "lv_check.check_times",
                        "check times must evenly divide horizon/dt",
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_simulate() -> String {
        r#"{
            "experiment": "simulate",
            "model": {"family": "example"},
            "numerics": {"dt": 0.005, "horizon": 1.0, "n": 10},
            "seed": 42
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(&minimal_simulate()).unwrap();
        assert_eq!(cfg.numerics.replications, 1);
        assert_eq!(cfg.numerics.record_stride, 1);
        assert_eq!(cfg.outputs.dir, PathBuf::from("out"));
        assert!(cfg.outputs.emit_csv && cfg.outputs.emit_json && !cfg.outputs.emit_svg);
        match &cfg.model {
            ModelConfig::Example { params, initial } => {
                assert_eq!(*params, ExampleModelParams::default());
                assert_eq!(initial, &vec![1.0]);
            }
            other => panic!("unexpected model {other:?}"),
        }
    }

    #[test]
    fn seed_is_mandatory() {
        let doc = r#"{
            "experiment": "simulate",
            "model": {"family": "example"},
            "numerics": {"dt": 0.005, "horizon": 1.0, "n": 10}
        }"#;
        let err = parse_config(doc).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let doc = minimal_simulate().replace("\"seed\": 42", "\"seed\": 42, \"extra\": 1");
        let err = parse_config(&doc).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
    }

    #[test]
    fn misaligned_delay_span_names_the_rule() {
        // dt = 0.003 divides the 0.3 horizon but not the 0.25 delay span.
        let doc = r#"{
            "experiment": "simulate",
            "model": {"family": "example"},
            "numerics": {"dt": 0.003, "horizon": 0.3, "n": 10},
            "seed": 42
        }"#;
        let err = parse_config(doc).unwrap_err();
        assert!(
            err.to_string().contains("dt must divide delay_span"),
            "{err}"
        );
    }

    #[test]
    fn chaos_reference_must_be_four_times_the_largest_size() {
        let doc = r#"{
            "experiment": "chaos",
            "model": {"family": "example"},
            "numerics": {"dt": 0.005, "horizon": 0.25, "n": 1, "replications": 2},
            "seed": 1,
            "chaos": {
                "sizes": [8, 16],
                "reference_size": 32,
                "rate": {"q": 2.0, "p": 6.0, "d": 1}
            }
        }"#;
        let err = parse_config(doc).unwrap_err();
        assert!(err.to_string().contains("reference_size"), "{err}");
        let ok = doc.replace("32", "64");
        assert!(parse_config(&ok).is_ok());
    }

    #[test]
    fn rate_params_are_validated_at_parse_time() {
        let doc = r#"{
            "experiment": "chaos",
            "model": {"family": "example"},
            "numerics": {"dt": 0.005, "horizon": 0.25, "n": 1},
            "seed": 1,
            "chaos": {
                "sizes": [8, 16],
                "reference_size": 64,
                "rate": {"q": 3.0, "p": 2.0, "d": 1}
            }
        }"#;
        let err = parse_config(doc).unwrap_err();
        assert!(err.to_string().contains("exceed"), "{err}");
    }

    #[test]
    fn mismatched_block_is_rejected() {
        let doc = minimal_simulate().replace(
            "\"seed\": 42",
            "\"seed\": 42, \"stability\": {}",
        );
        let err = parse_config(&doc).unwrap_err();
        assert!(err.to_string().contains("stability"), "{err}");
    }

    #[test]
    fn round_trip_preserves_the_config() {
        let cfg = parse_config(&minimal_simulate()).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = parse_config(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn lv_check_times_must_divide_the_grid() {
        let doc = r#"{
            "experiment": "lv-check",
            "model": {"family": "example"},
            "numerics": {"dt": 0.005, "horizon": 1.0, "n": 10},
            "seed": 1,
            "lv_check": {"alpha": 1.2, "lambda": 0.7, "check_times": 7}
        }"#;
        let err = parse_config(doc).unwrap_err();
        assert!(err.to_string().contains("check_times"), "{err}");
        let ok = doc.replace("\"check_times\": 7", "\"check_times\": 20");
        assert!(parse_config(&ok).is_ok());
    }
}
