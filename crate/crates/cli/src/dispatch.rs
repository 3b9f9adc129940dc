//! Experiment dispatch: resolve the model, run the selected pipeline, write
//! outputs atomically, and map the scientific verdict to an exit status.
//!
//! Exit discipline: 0 means the run completed and every tested hypothesis
//! held; 1 means the run completed but a verdict failed (a falsified
//! certificate is a result, not a crash); 2 means the program itself failed.

use std::collections::HashMap;

use serde::Serialize;

use mvsfde_core::experiments::{
    chaos_experiment, razumikhin_check, stability_experiment, ChaosReport, ChaosSettings,
    LyapunovSpec, RazumikhinParams, RazumikhinReport, StabilityReport, StabilitySettings,
    StabilityVerdict,
};
use mvsfde_core::{
    grid_steps, InitialData, ModelSpec, ParticleSystem, RunOptions, TrajectoryRecord,
};

use crate::config::{
    ChaosConfig, ConfigError, ExperimentKind, LvCheckConfig, ModelConfig, RunConfig,
    SimulateConfig, StabilityConfig,
};
use crate::output::{config_hash, fmt_f64, to_pretty_json, write_atomic, Csv, RunManifest};
use crate::svg::{line_plot, Series, PALETTE};

/// Custom models registered by embedding code, addressed by name from the
/// config's `model.family = "custom"` block.
#[derive(Default)]
pub struct ModelRegistry {
    entries: HashMap<String, (ModelSpec, InitialData)>,
}

impl ModelRegistry {
    pub fn register(&mut self, name: impl Into<String>, model: ModelSpec, init: InitialData) {
        self.entries.insert(name.into(), (model, init));
    }

    fn get(&self, name: &str) -> Option<&(ModelSpec, InitialData)> {
        self.entries.get(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DispatchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] mvsfde_core::Error),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown custom model `{0}`; register it through the embedding API")]
    UnknownModel(String),
}

/// Run outcome: the run finished; did every verdict hold?
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Success,
    VerdictFailed(String),
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::VerdictFailed(_) => 1,
        }
    }
}

#[derive(Serialize)]
struct ReportEnvelope<T: Serialize> {
    experiment: &'static str,
    verdict: String,
    config_hash: String,
    seed: u64,
    report: T,
}

struct OutputSink<'a> {
    cfg: &'a RunConfig,
    files: Vec<(String, Vec<u8>)>,
}

impl<'a> OutputSink<'a> {
    fn new(cfg: &'a RunConfig) -> Self {
        Self {
            cfg,
            files: Vec::new(),
        }
    }

    fn csv(&mut self, name: &str, csv: Csv) {
        if self.cfg.outputs.emit_csv {
            self.files.push((name.to_string(), csv.into_bytes()));
        }
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        if self.cfg.outputs.emit_json {
            self.files.push((name.to_string(), to_pretty_json(value)));
        }
    }

    fn svg(&mut self, name: &str, body: String) {
        if self.cfg.outputs.emit_svg {
            self.files.push((name.to_string(), body.into_bytes()));
        }
    }

    fn flush(self, experiment: &ExperimentKind) -> Result<(), DispatchError> {
        let dir = &self.cfg.outputs.dir;
        let mut names: Vec<String> = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            write_atomic(&dir.join(name), bytes)?;
            names.push(name.clone());
        }
        let manifest = RunManifest {
            experiment: experiment.name().to_string(),
            config_hash: config_hash(self.cfg),
            seed: self.cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: names,
        };
        write_atomic(&dir.join("run_manifest.json"), &to_pretty_json(&manifest))?;
        Ok(())
    }
}

/// Runs the configured experiment end to end.
pub fn dispatch(cfg: &RunConfig, registry: &ModelRegistry) -> Result<Outcome, DispatchError> {
    cfg.validate()?;
    let (model, init) = resolve_model(cfg, registry)?;
    if grid_steps(model.delay(), cfg.numerics.dt).is_none() {
        return Err(ConfigError::Invalid {
            key: "numerics.dt",
            message: format!("dt must divide the model delay {}", model.delay()),
        }
        .into());
    }
    match cfg.experiment {
        ExperimentKind::Simulate => run_simulate(cfg, &model, &init),
        ExperimentKind::Chaos => run_chaos(cfg, &model, &init),
        ExperimentKind::Stability => run_stability(cfg, &model, &init),
        ExperimentKind::LvCheck => run_lv_check(cfg, &model, &init),
    }
}

fn resolve_model(
    cfg: &RunConfig,
    registry: &ModelRegistry,
) -> Result<(ModelSpec, InitialData), DispatchError> {
    match &cfg.model {
        ModelConfig::Example { params, initial } => {
            let model = params.build()?;
            Ok((model, InitialData::Constant(initial.clone())))
        }
        ModelConfig::Custom { name, initial } => {
            let (model, default_init) = registry
                .get(name)
                .ok_or_else(|| DispatchError::UnknownModel(name.clone()))?;
            let init = match initial {
                Some(x0) => InitialData::Constant(x0.clone()),
                None => default_init.clone(),
            };
            Ok((model.clone(), init))
        }
    }
}

fn moment_column(q: f64) -> String {
    if q.fract() == 0.0 && q.abs() < 1e15 {
        format!("m{}", q as i64)
    } else {
        format!("m{q}")
    }
}

#[derive(Serialize)]
struct SimulateSummary {
    n: usize,
    dt: f64,
    horizon: f64,
    record_stride: u64,
    moment_orders: Vec<f64>,
    initial_moments: Vec<f64>,
    final_moments: Vec<f64>,
    recorded_times: usize,
}

fn run_simulate(
    cfg: &RunConfig,
    model: &ModelSpec,
    init: &InitialData,
) -> Result<Outcome, DispatchError> {
    let block = cfg.simulate.clone().unwrap_or_default();
    let record = simulate_record(cfg, model, init, &block)?;

    let mut sink = OutputSink::new(cfg);
    sink.csv("simulate.csv", simulate_csv(model, &record));
    let summary = SimulateSummary {
        n: cfg.numerics.n,
        dt: cfg.numerics.dt,
        horizon: cfg.numerics.horizon,
        record_stride: cfg.numerics.record_stride,
        moment_orders: record.moment_orders.clone(),
        initial_moments: record.moments.iter().map(|t| t[0]).collect(),
        final_moments: record
            .moments
            .iter()
            .map(|t| *t.last().expect("non-empty track"))
            .collect(),
        recorded_times: record.times.len(),
    };
    sink.json(
        "simulate_report.json",
        &ReportEnvelope {
            experiment: "simulate",
            verdict: "completed".into(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            report: summary,
        },
    );
    let series: Vec<Series> = record
        .moment_orders
        .iter()
        .zip(&record.moments)
        .enumerate()
        .map(|(i, (q, track))| Series {
            label: moment_column(*q),
            points: record.times.iter().copied().zip(track.iter().copied()).collect(),
            color: PALETTE[i % PALETTE.len()],
            dashed: false,
        })
        .collect();
    sink.svg(
        "simulate.svg",
        line_plot("moment decay", "t", "moment", false, true, &series),
    );
    sink.flush(&cfg.experiment)?;
    Ok(Outcome::Success)
}

fn simulate_record(
    cfg: &RunConfig,
    model: &ModelSpec,
    init: &InitialData,
    block: &SimulateConfig,
) -> Result<TrajectoryRecord, DispatchError> {
    let mut sys = ParticleSystem::new(
        model.clone(),
        cfg.numerics.n,
        cfg.numerics.dt,
        init,
        cfg.seed,
        0,
    )?;
    let options = RunOptions {
        record_stride: cfg.numerics.record_stride,
        moments: block.moments.clone(),
        path_particles: cfg.numerics.record_paths,
    };
    Ok(sys.run(cfg.numerics.horizon, &options)?)
}

fn simulate_csv(model: &ModelSpec, record: &TrajectoryRecord) -> Csv {
    let mut header: Vec<String> = vec!["t".into()];
    for q in &record.moment_orders {
        header.push(moment_column(*q));
    }
    for k in 0..record.paths.len() {
        for c in 0..model.dim() {
            header.push(format!("p{k}_{c}"));
        }
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::new(&header_refs);
    for (ti, t) in record.times.iter().enumerate() {
        let mut row = vec![fmt_f64(*t)];
        for track in &record.moments {
            row.push(fmt_f64(track[ti]));
        }
        for path in &record.paths {
            for v in &path[ti] {
                row.push(fmt_f64(*v));
            }
        }
        csv.row(&row);
    }
    csv
}

fn run_chaos(
    cfg: &RunConfig,
    model: &ModelSpec,
    init: &InitialData,
) -> Result<Outcome, DispatchError> {
    let block: &ChaosConfig = cfg.chaos.as_ref().expect("validated");
    let settings = ChaosSettings {
        sizes: block.sizes.clone(),
        reference_size: block.reference_size,
        horizon: cfg.numerics.horizon,
        dt: cfg.numerics.dt,
        replications: cfg.numerics.replications,
        q: block.q,
        rate: block.rate,
    };
    let report = chaos_experiment(model, init, &settings, cfg.seed)?;

    let verdict = match (block.slope_range, report.slope_sup) {
        (Some((lo, hi)), Some(slope)) if slope < lo || slope > hi => {
            format!("slope-outside-range ({slope:.4} not in [{lo}, {hi}])")
        }
        (Some(_), None) => "slope-outside-range (no positive errors to fit)".to_string(),
        _ => "completed".to_string(),
    };
    let failed = verdict != "completed";

    let mut sink = OutputSink::new(cfg);
    for rep in &report.per_replication {
        let mut csv = Csv::new(&["n", "err_sup", "err_w"]);
        for (idx, size) in report.sizes.iter().enumerate() {
            csv.row(&[
                size.n.to_string(),
                fmt_f64(rep.err_sup[idx]),
                fmt_f64(rep.err_w[idx]),
            ]);
        }
        sink.csv(&format!("chaos_rep_{:03}.csv", rep.replication), csv);
    }
    sink.svg("chaos.svg", chaos_svg(&report));
    sink.json(
        "chaos_report.json",
        &ReportEnvelope {
            experiment: "chaos",
            verdict: verdict.clone(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            report,
        },
    );
    sink.flush(&cfg.experiment)?;
    Ok(if failed {
        Outcome::VerdictFailed(verdict)
    } else {
        Outcome::Success
    })
}

fn chaos_svg(report: &ChaosReport) -> String {
    let pts = |f: fn(&mvsfde_core::experiments::ChaosSizeResult) -> f64| -> Vec<(f64, f64)> {
        report.sizes.iter().map(|s| (s.n as f64, f(s))).collect()
    };
    // The theoretical curve has an unknown constant; anchor it to the first
    // measured point for a readable overlay.
    let eps_scale = match report.sizes.first() {
        Some(first) if first.err_sup > 0.0 && first.epsilon > 0.0 => first.err_sup / first.epsilon,
        _ => 1.0,
    };
    let series = vec![
        Series {
            label: "err_sup".into(),
            points: pts(|s| s.err_sup),
            color: PALETTE[0],
            dashed: false,
        },
        Series {
            label: "err_w".into(),
            points: pts(|s| s.err_w),
            color: PALETTE[1],
            dashed: false,
        },
        Series {
            label: "epsilon_n (scaled)".into(),
            points: report
                .sizes
                .iter()
                .map(|s| (s.n as f64, s.epsilon * eps_scale))
                .collect(),
            color: PALETTE[3],
            dashed: true,
        },
    ];
    line_plot("coupling error vs system size", "N", "error", true, true, &series)
}

fn run_stability(
    cfg: &RunConfig,
    model: &ModelSpec,
    init: &InitialData,
) -> Result<Outcome, DispatchError> {
    let block: StabilityConfig = cfg.stability.clone().unwrap_or_default();
    let settings = StabilitySettings {
        n: cfg.numerics.n,
        horizon: cfg.numerics.horizon,
        dt: cfg.numerics.dt,
        replications: cfg.numerics.replications,
        q: block.q,
        record_stride: cfg.numerics.record_stride,
        fit_window: block.fit_window,
        tolerance: block.tolerance,
        envelope_slack: block.envelope_slack,
        certificate: block.certificate,
    };
    let report = stability_experiment(model, init, &settings, cfg.seed)?;

    let (verdict, failed) = stability_verdict(&report);

    let mut sink = OutputSink::new(cfg);
    let m_col = moment_column(report.q);
    for (r, track) in report.per_replication.iter().enumerate() {
        let mut csv = Csv::new(&["t", m_col.as_str()]);
        for (t, m) in report.times.iter().zip(track) {
            csv.row(&[fmt_f64(*t), fmt_f64(*m)]);
        }
        sink.csv(&format!("stability_rep_{r:03}.csv"), csv);
    }
    sink.svg("stability.svg", stability_svg(&report));
    sink.json(
        "stability_report.json",
        &ReportEnvelope {
            experiment: "stability",
            verdict: verdict.clone(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            report,
        },
    );
    sink.flush(&cfg.experiment)?;
    Ok(if failed {
        Outcome::VerdictFailed(verdict)
    } else {
        Outcome::Success
    })
}

fn stability_verdict(report: &StabilityReport) -> (String, bool) {
    match &report.certificate {
        Some(check) => {
            if check.confirmed {
                ("certificate-confirmed".to_string(), false)
            } else {
                ("certificate-not-confirmed".to_string(), true)
            }
        }
        None => {
            let verdict = match report.verdict {
                StabilityVerdict::Stable => "stable",
                StabilityVerdict::TriviallyStable => "trivially-stable",
                StabilityVerdict::NotStableAtThisScale => "not-stable-at-this-scale",
            };
            (verdict.to_string(), false)
        }
    }
}

fn stability_svg(report: &StabilityReport) -> String {
    let mut series = vec![Series {
        label: format!("mean {}", moment_column(report.q)),
        points: report
            .times
            .iter()
            .copied()
            .zip(report.mean_moment.iter().copied())
            .collect(),
        color: PALETTE[0],
        dashed: false,
    }];
    if let Some(check) = &report.certificate {
        let prefactor = (check.certificate.c3 + check.certificate.c4)
            / (check.certificate.c1 + check.certificate.c2)
            * check.initial_sup_norm_q
            * (1.0 + check.envelope_slack);
        series.push(Series {
            label: "certified envelope".into(),
            points: report
                .times
                .iter()
                .map(|t| (*t, prefactor * (-check.kappa_cert * t).exp()))
                .collect(),
            color: PALETTE[1],
            dashed: true,
        });
    }
    line_plot("moment decay", "t", "moment", false, true, &series)
}

fn run_lv_check(
    cfg: &RunConfig,
    model: &ModelSpec,
    init: &InitialData,
) -> Result<Outcome, DispatchError> {
    let block: &LvCheckConfig = cfg.lv_check.as_ref().expect("validated");
    let steps = grid_steps(cfg.numerics.horizon, cfg.numerics.dt).expect("validated");
    let per_check = steps / block.check_times;

    let mut sys = ParticleSystem::new(
        model.clone(),
        cfg.numerics.n,
        cfg.numerics.dt,
        init,
        cfg.seed,
        0,
    )?;
    let mut snapshots = Vec::with_capacity(block.check_times as usize);
    for _ in 0..block.check_times {
        for _ in 0..per_check {
            sys.step()?;
        }
        snapshots.push(sys.clone());
    }

    let lyap = LyapunovSpec::quadratic_mean_square();
    let params = RazumikhinParams {
        alpha: block.alpha,
        lambda: block.lambda,
        q: block.q,
        c: block.c,
    };
    let report = razumikhin_check(model, &lyap, &snapshots, &params)?;

    let ok = report.pass_fraction >= block.min_pass_fraction && report.sandwich_ok;
    let verdict = if ok {
        "drift-condition-confirmed".to_string()
    } else {
        format!(
            "drift-condition-violated (pass fraction {:.4} over {} active times)",
            report.pass_fraction, report.active_count
        )
    };

    let mut sink = OutputSink::new(cfg);
    sink.csv("lv_check.csv", lv_check_csv(&report));
    sink.json(
        "lv_check_report.json",
        &ReportEnvelope {
            experiment: "lv-check",
            verdict: verdict.clone(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            report,
        },
    );
    sink.flush(&cfg.experiment)?;
    Ok(if ok {
        Outcome::Success
    } else {
        Outcome::VerdictFailed(verdict)
    })
}

fn lv_check_csv(report: &RazumikhinReport) -> Csv {
    let mut csv = Csv::new(&[
        "t",
        "v_current",
        "v_history_max",
        "condition_active",
        "lv",
        "std_error",
        "threshold",
        "margin",
        "pass",
    ]);
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for p in &report.points {
        csv.row(&[
            fmt_f64(p.time),
            fmt_f64(p.v_current),
            fmt_f64(p.v_history_max),
            p.condition_active.to_string(),
            opt(p.lv),
            opt(p.std_error),
            opt(p.threshold),
            opt(p.margin),
            p.pass.map(|b| b.to_string()).unwrap_or_default(),
        ]);
    }
    csv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use std::path::PathBuf;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("mvsfde-dispatch-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn simulate_writes_csv_report_and_manifest() {
        let dir = tmp_dir("sim");
        let doc = format!(
            r#"{{
                "experiment": "simulate",
                "model": {{"family": "example"}},
                "numerics": {{"dt": 0.005, "horizon": 0.05, "n": 8}},
                "seed": 4,
                "outputs": {{"dir": {dir:?}}}
            }}"#
        );
        let cfg = parse_config(&doc).unwrap();
        let outcome = dispatch(&cfg, &ModelRegistry::default()).unwrap();
        assert_eq!(outcome, Outcome::Success);
        let csv = std::fs::read_to_string(dir.join("simulate.csv")).unwrap();
        assert!(csv.starts_with("t,m2\n"), "header was {:?}", csv.lines().next());
        assert!(dir.join("simulate_report.json").exists());
        assert!(dir.join("run_manifest.json").exists());
        assert!(!dir.join("simulate.svg").exists(), "svg off by default");
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn unknown_custom_model_is_a_runtime_error() {
        let doc = r#"{
            "experiment": "simulate",
            "model": {"family": "custom", "name": "nope"},
            "numerics": {"dt": 0.01, "horizon": 0.1, "n": 2},
            "seed": 1
        }"#;
        let cfg = parse_config(doc).unwrap();
        match dispatch(&cfg, &ModelRegistry::default()) {
            Err(DispatchError::UnknownModel(name)) => assert_eq!(name, "nope"),
            other => panic!("expected unknown-model error, got {other:?}"),
        }
    }

    #[test]
    fn failed_certificate_yields_verdict_failure() {
        // min{λ, log(α)/τ} ≈ 18 far exceeds any achievable empirical rate.
        let dir = tmp_dir("stab");
        let doc = format!(
            r#"{{
                "experiment": "stability",
                "model": {{"family": "example"}},
                "numerics": {{"dt": 0.005, "horizon": 1.0, "n": 16, "replications": 2}},
                "seed": 3,
                "outputs": {{"dir": {dir:?}}},
                "stability": {{
                    "certificate": {{
                        "lambda": 50.0, "alpha": 100.0, "tau": 0.25, "q": 2.0,
                        "c1": 1.0, "c2": 1.0, "c3": 1.0, "c4": 1.0
                    }}
                }}
            }}"#
        );
        let cfg = parse_config(&doc).unwrap();
        let outcome = dispatch(&cfg, &ModelRegistry::default()).unwrap();
        assert_eq!(outcome.exit_code(), 1);
        let report = std::fs::read_to_string(dir.join("stability_report.json")).unwrap();
        assert!(report.contains("certificate-not-confirmed"), "{report}");
        let _ = std::fs::remove_dir_all(&dir);
    }
}
