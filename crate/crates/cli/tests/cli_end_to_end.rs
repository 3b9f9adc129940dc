//! End-to-end checks of the `mvsfde` binary: exit-code discipline, flag
//! handling, and the thread-cap environment variable.

use std::path::PathBuf;
use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mvsfde"))
}

fn tmp(tag: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("e2e-{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn simulate_from_flags_exits_zero_and_writes_csv() {
    let dir = tmp("simulate-flags");
    let status = binary()
        .args([
            "simulate",
            "--n",
            "8",
            "--dt",
            "0.005",
            "--horizon",
            "0.1",
            "--seed",
            "7",
            "--record-stride",
            "4",
            "--out",
        ])
        .arg(&dir)
        .status()
        .expect("binary runs");
    assert_eq!(status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.join("simulate.csv")).unwrap();
    assert!(csv.starts_with("t,m2\n"), "header: {:?}", csv.lines().next());
    assert!(dir.join("run_manifest.json").exists());
}

#[test]
fn failed_verdict_exits_one() {
    let dir = tmp("verdict");
    let config = dir.join("config.json");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(
        &config,
        format!(
            r#"{{
                "experiment": "stability",
                "model": {{"family": "example"}},
                "numerics": {{"dt": 0.005, "horizon": 0.5, "n": 8, "replications": 2}},
                "seed": 5,
                "outputs": {{"dir": "{}"}},
                "stability": {{
                    "certificate": {{
                        "lambda": 50.0, "alpha": 100.0, "tau": 0.25, "q": 2.0,
                        "c1": 1.0, "c2": 1.0, "c3": 1.0, "c4": 1.0
                    }}
                }}
            }}"#,
            dir.join("out").display()
        ),
    )
    .unwrap();
    let output = binary()
        .args(["stability", "--config"])
        .arg(&config)
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(1), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let report = std::fs::read_to_string(dir.join("out/stability_report.json")).unwrap();
    assert!(report.contains("certificate-not-confirmed"));
}

#[test]
fn invalid_config_exits_two_and_names_the_key() {
    let dir = tmp("invalid");
    std::fs::create_dir_all(&dir).unwrap();
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{
            "experiment": "simulate",
            "model": {"family": "example"},
            "numerics": {"dt": 0.003, "horizon": 0.3, "n": 4},
            "seed": 1
        }"#,
    )
    .unwrap();
    let output = binary()
        .args(["simulate", "--config"])
        .arg(&config)
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("delay_span"), "stderr: {stderr}");
}

#[test]
fn wrong_subcommand_for_config_is_rejected() {
    let dir = tmp("mismatch");
    std::fs::create_dir_all(&dir).unwrap();
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{
            "experiment": "simulate",
            "model": {"family": "example"},
            "numerics": {"dt": 0.005, "horizon": 0.1, "n": 4},
            "seed": 1
        }"#,
    )
    .unwrap();
    let output = binary()
        .args(["stability", "--config"])
        .arg(&config)
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn thread_cap_does_not_change_outputs() {
    let run = |threads: &str, dir: &PathBuf| {
        let status = binary()
            .env("MVSFDE_THREADS", threads)
            .args([
                "simulate",
                "--n",
                "64",
                "--dt",
                "0.005",
                "--horizon",
                "0.25",
                "--seed",
                "11",
                "--out",
            ])
            .arg(dir)
            .status()
            .expect("binary runs");
        assert_eq!(status.code(), Some(0));
        std::fs::read(dir.join("simulate.csv")).unwrap()
    };
    let a = run("1", &tmp("threads-1"));
    let b = run("2", &tmp("threads-2"));
    assert_eq!(a, b, "worker-thread count leaked into the results");
}

#[test]
fn bad_thread_cap_is_rejected() {
    let output = binary()
        .env("MVSFDE_THREADS", "zero")
        .args(["simulate", "--n", "2", "--dt", "0.01", "--horizon", "0.0", "--seed", "1"])
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("MVSFDE_THREADS"));
}
