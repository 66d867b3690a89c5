//! Command-line runner for the experiment harness.
//!
//! Each subcommand resolves its settings from a named preset or a JSON
//! config file, runs the seeded repetitions, prints a compact summary
//! table, and (with `--out`) writes `metrics.csv`, `traces.csv`,
//! `summary.csv`, and `manifest.json`.

use clap::{Args, Parser, Subcommand};
use ctac_core::exec;
use ctac_core::harness::{
    default_preset_name, preset_config, run_experiment, write_outputs, ExperimentConfig,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ctac",
    version,
    about = "Continuous-time actor-critic experiments"
)]
struct Cli {
    #[command(subcommand)]
    task: Task,
}

#[derive(Subcommand)]
enum Task {
    /// Offline-episodic portfolio training
    MvOffline(RunArgs),
    /// Online-episodic portfolio training
    MvOnline(RunArgs),
    /// Incremental actor-critic on the ergodic linear-quadratic task
    LqErgodic(RunArgs),
    /// Closed-form benchmark values and the brute-force oracle
    Benchmark(RunArgs),
    /// Policy-gradient estimator vs finite differences
    Gradcheck(RunArgs),
    /// Policy-evaluation methods vs a Monte-Carlo oracle
    PeCheck(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config (overrides --preset)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset (defaults to the task's desk-scale preset)
    #[arg(long)]
    preset: Option<String>,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Repetition count override
    #[arg(long)]
    reps: Option<usize>,
    /// Output directory for metrics.csv, traces.csv, summary.csv,
    /// manifest.json
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker pool size (defaults to the number of cores)
    #[arg(long)]
    workers: Option<usize>,
}

impl Task {
    fn name(&self) -> &'static str {
        match self {
            Task::MvOffline(_) => "mv-offline",
            Task::MvOnline(_) => "mv-online",
            Task::LqErgodic(_) => "lq-ergodic",
            Task::Benchmark(_) => "benchmark",
            Task::Gradcheck(_) => "gradcheck",
            Task::PeCheck(_) => "pe-check",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Task::MvOffline(a)
            | Task::MvOnline(a)
            | Task::LqErgodic(a)
            | Task::Benchmark(a)
            | Task::Gradcheck(a)
            | Task::PeCheck(a) => a,
        }
    }
}

fn resolve_config(task: &str, args: &RunArgs) -> Result<ExperimentConfig, String> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let cfg: ExperimentConfig =
                serde_json::from_str(&text).map_err(|e| format!("bad config: {e}"))?;
            if cfg.task.name() != task {
                return Err(format!(
                    "config is for task '{}', but the '{task}' subcommand was invoked",
                    cfg.task.name()
                ));
            }
            cfg
        }
        None => {
            let name = args.preset.as_deref().unwrap_or(default_preset_name(task));
            preset_config(task, name).map_err(|e| e.to_string())?
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = args.reps {
        cfg.repetitions = reps;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let task = cli.task.name();
    let args = cli.task.args();

    let cfg = match resolve_config(task, args) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::FAILURE;
        }
    };

    if let Some(w) = args.workers {
        exec::configure_workers(w);
    }

    let output = match run_experiment(&cfg, args.workers) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };

    println!(
        "task: {task} (seed {}, {} repetitions)",
        cfg.seed, cfg.repetitions
    );
    print!("{}", output.summary.render_pretty());
    if let Some(dir) = &args.out {
        if let Err(e) = write_outputs(&output, dir) {
            eprintln!("error writing outputs: {e}");
            return ExitCode::FAILURE;
        }
        println!(
            "wrote metrics.csv, traces.csv, summary.csv, manifest.json to {}",
            dir.display()
        );
    }
    ExitCode::SUCCESS
}
