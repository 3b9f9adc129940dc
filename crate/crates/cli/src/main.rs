//! `mvsfde` — particle-system experiments for mean-field SFDEs with common
//! noise.
//!
//! Exit codes: 0 success, 1 a scientific verdict failed (e.g. a certificate
//! was not confirmed), 2 the program failed. CI pipelines can therefore tell
//! a falsified hypothesis from a crash.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mvsfde_cli::config::{
    parse_config, ExperimentKind, ModelConfig, Numerics, OutputConfig, RunConfig, SimulateConfig,
};
use mvsfde_cli::dispatch::{dispatch, ModelRegistry, Outcome};

#[derive(Parser)]
#[command(
    name = "mvsfde",
    version,
    about = "Interacting particle systems for mean-field stochastic functional differential equations",
    after_help = "Environment:\n  MVSFDE_THREADS  cap on worker threads (default: hardware count)"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one particle system and record moment tracks and paths.
    Simulate(SimulateArgs),
    /// Coupled convergence-rate experiment against a proxy-limit system.
    Chaos(ConfigArgs),
    /// Moment-decay estimation with optional certificate confirmation.
    Stability(ConfigArgs),
    /// Lyapunov drift-condition check along a recorded trajectory.
    LvCheck(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON run configuration (optional when the flags below are given).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model family (`example`; custom models need a config file).
    #[arg(long)]
    model: Option<String>,
    /// Number of particles.
    #[arg(long)]
    n: Option<usize>,
    /// Step size.
    #[arg(long)]
    dt: Option<f64>,
    /// Final time (a multiple of dt).
    #[arg(long)]
    horizon: Option<f64>,
    /// Master seed (mandatory, here or in the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Record every this many steps.
    #[arg(long)]
    record_stride: Option<u64>,
    /// Moment orders to track, comma separated.
    #[arg(long, value_delimiter = ',')]
    moments: Option<Vec<f64>>,
    /// Number of leading particle paths to record.
    #[arg(long)]
    record_paths: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match std::env::var("MVSFDE_THREADS") {
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => {
                eprintln!("mvsfde: MVSFDE_THREADS must be a positive integer, got {raw:?}");
                return ExitCode::from(2);
            }
        },
        Err(_) => 0, // rayon default: hardware count
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool,
        Err(err) => {
            eprintln!("mvsfde: failed to build the worker pool: {err}");
            return ExitCode::from(2);
        }
    };
    ExitCode::from(pool.install(|| run(cli)))
}

fn run(cli: Cli) -> u8 {
    let config = match build_config(cli) {
        Ok(cfg) => cfg,
        Err(message) => {
            eprintln!("mvsfde: {message}");
            return 2;
        }
    };
    match dispatch(&config, &ModelRegistry::default()) {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::VerdictFailed(verdict)) => {
            eprintln!("mvsfde: verdict failed: {verdict}");
            1
        }
        Err(err) => {
            eprintln!("mvsfde: error: {err}");
            2
        }
    }
}

fn build_config(cli: Cli) -> Result<RunConfig, String> {
    match cli.command {
        Command::Simulate(args) => build_simulate_config(args),
        Command::Chaos(args) => load_config(args, ExperimentKind::Chaos),
        Command::Stability(args) => load_config(args, ExperimentKind::Stability),
        Command::LvCheck(args) => load_config(args, ExperimentKind::LvCheck),
    }
}

fn load_config(args: ConfigArgs, expected: ExperimentKind) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| format!("cannot read {}: {e}", args.config.display()))?;
    let mut config = parse_config(&text).map_err(|e| e.to_string())?;
    if config.experiment != expected {
        return Err(format!(
            "config declares experiment `{}` but the `{}` subcommand was invoked",
            config.experiment.name(),
            expected.name()
        ));
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = args.out {
        config.outputs.dir = out;
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn build_simulate_config(args: SimulateArgs) -> Result<RunConfig, String> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let config = parse_config(&text).map_err(|e| e.to_string())?;
            if config.experiment != ExperimentKind::Simulate {
                return Err(format!(
                    "config declares experiment `{}` but `simulate` was invoked",
                    config.experiment.name()
                ));
            }
            config
        }
        None => {
            if let Some(model) = &args.model {
                if model != "example" {
                    return Err(format!(
                        "unknown model family `{model}`; only `example` is available from flags \
                         (custom models need a config file)"
                    ));
                }
            }
            let (dt, horizon, n, seed) = match (args.dt, args.horizon, args.n, args.seed) {
                (Some(dt), Some(horizon), Some(n), Some(seed)) => (dt, horizon, n, seed),
                _ => {
                    return Err(
                        "without --config, simulate needs --dt, --horizon, --n and --seed".into(),
                    )
                }
            };
            RunConfig {
                experiment: ExperimentKind::Simulate,
                model: ModelConfig::Example {
                    params: Default::default(),
                    initial: vec![1.0],
                },
                numerics: Numerics {
                    dt,
                    horizon,
                    n,
                    replications: 1,
                    record_stride: 1,
                    record_paths: 0,
                },
                seed,
                outputs: OutputConfig::default(),
                simulate: Some(SimulateConfig::default()),
                chaos: None,
                stability: None,
                lv_check: None,
            }
        }
    };
    // Flags override the config.
    if let Some(n) = args.n {
        config.numerics.n = n;
    }
    if let Some(dt) = args.dt {
        config.numerics.dt = dt;
    }
    if let Some(horizon) = args.horizon {
        config.numerics.horizon = horizon;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(stride) = args.record_stride {
        config.numerics.record_stride = stride;
    }
    if let Some(paths) = args.record_paths {
        config.numerics.record_paths = paths;
    }
    if let Some(moments) = args.moments {
        config.simulate = Some(SimulateConfig { moments });
    }
    if let Some(out) = args.out {
        config.outputs.dir = out;
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}
