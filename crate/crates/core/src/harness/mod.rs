//! Experiment orchestration: configuration and presets, seeded repetition
//! fan-out, metrics aggregation, and CSV/manifest output.
//!
//! A run is fully determined by `(config, master seed)`: repetitions draw
//! from per-index child streams and results merge by repetition index, so
//! every output byte except the manifest timestamp is reproducible
//! regardless of worker count.

pub mod gradcheck;
pub mod pecheck;

use crate::exec;
use crate::lq::{
    lq_benchmark_solve, lq_bruteforce_oracle, lq_experiment, LqError, LqExperimentConfig,
};
use crate::meanvar::{
    mv_benchmark, mv_evaluate_learned, mv_offline_train, mv_online_train, MvConfig, MvError,
    TrainError,
};
use crate::policy::RegularizerKind;
use crate::rng::RandomSource;
use crate::sim::{GbmMarket, LqModel, SimError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

pub use gradcheck::{gradcheck_report, GradcheckConfig, GradcheckReport, GradcheckRow};
pub use pecheck::{pe_check, PeCheckConfig, PeCheckReport, ProbeRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Mv(#[from] MvError),
    #[error(transparent)]
    Lq(#[from] LqError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Task dispatch plus everything the task needs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case")]
pub enum TaskParams {
    MvOffline { config: MvConfig, eval_paths: usize },
    MvOnline { config: MvConfig, eval_paths: usize },
    LqErgodic { config: LqExperimentConfig },
    Benchmark { config: BenchmarkConfig },
    Gradcheck { config: GradcheckConfig },
    PeCheck { config: PeCheckConfig },
}

impl TaskParams {
    pub fn name(&self) -> &'static str {
        match self {
            TaskParams::MvOffline { .. } => "mv-offline",
            TaskParams::MvOnline { .. } => "mv-online",
            TaskParams::LqErgodic { .. } => "lq-ergodic",
            TaskParams::Benchmark { .. } => "benchmark",
            TaskParams::Gradcheck { .. } => "gradcheck",
            TaskParams::PeCheck { .. } => "pe-check",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub lq_model: LqModel,
    pub lq_gamma: f64,
    pub mv_market: GbmMarket,
    pub mv_x0: f64,
    pub mv_z: f64,
    pub mv_horizon: f64,
    pub mv_gamma: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub task: TaskParams,
    pub seed: u64,
    pub repetitions: usize,
}

impl ExperimentConfig {
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        let mut out = String::new();
        for byte in hash.iter().take(8) {
            let _ = write!(out, "{byte:02x}");
        }
        out
    }
}

/// Default settings of the two worked applications at full scale
/// (`*-paper`) and at a scale that finishes in minutes (`*-desk`).
pub fn preset_config(task: &str, preset: &str) -> Result<ExperimentConfig, HarnessError> {
    let unknown = || HarnessError::Config(format!("unknown preset '{preset}' for task '{task}'"));
    let mv_common = MvConfig {
        market: GbmMarket {
            mu: -0.5,
            sigma: 0.1,
            r_free: 0.0,
        },
        x0: 1.0,
        z: 1.4,
        horizon: 1.0,
        dt: 1.0 / 252.0,
        gamma: 0.1,
        multiplier_batch: 10,
        iterations: 20_000,
        batch_size: 128,
        training_years: 20,
        alpha_w: 0.05,
        alpha_theta: 0.1,
        alpha_phi: 0.1,
        schedule_exponent: 0.51,
        kind: RegularizerKind::Integrated,
        literal_multiplier_rule: false,
        action_clip: None,
        log_every: 100,
    };
    match (task, preset) {
        ("mv-offline", "mv-paper") => Ok(ExperimentConfig {
            task: TaskParams::MvOffline {
                config: mv_common,
                eval_paths: 10_000,
            },
            seed: 1,
            repetitions: 100,
        }),
        ("mv-offline", "mv-desk") => Ok(ExperimentConfig {
            task: TaskParams::MvOffline {
                config: MvConfig {
                    iterations: 5_000,
                    batch_size: 32,
                    log_every: 50,
                    ..mv_common
                },
                eval_paths: 10_000,
            },
            seed: 1,
            repetitions: 10,
        }),
        ("mv-online", "mv-paper") => Ok(ExperimentConfig {
            task: TaskParams::MvOnline {
                config: MvConfig {
                    market: GbmMarket {
                        mu: 0.5,
                        sigma: 0.1,
                        r_free: 0.0,
                    },
                    multiplier_batch: 1,
                    log_every: 1,
                    ..mv_common
                },
                eval_paths: 10_000,
            },
            seed: 1,
            repetitions: 100,
        }),
        // desk scale: one pass over a 20-year stream is a short run, so
        // the initial rates are larger than the full-scale ones
        ("mv-online", "mv-desk") => Ok(ExperimentConfig {
            task: TaskParams::MvOnline {
                config: MvConfig {
                    market: GbmMarket {
                        mu: 0.5,
                        sigma: 0.1,
                        r_free: 0.0,
                    },
                    multiplier_batch: 1,
                    log_every: 1,
                    alpha_w: 0.5,
                    alpha_theta: 2.0,
                    alpha_phi: 2.0,
                    ..mv_common
                },
                eval_paths: 10_000,
            },
            seed: 1,
            repetitions: 10,
        }),
        ("lq-ergodic", "lq-paper") => Ok(ExperimentConfig {
            task: TaskParams::LqErgodic {
                config: LqExperimentConfig {
                    model: crate::lq::default_model(),
                    gamma: 0.1,
                    dt: 0.01,
                    total_time: 1e6,
                    x0: 0.0,
                    alpha_theta: 0.001,
                    alpha_v: 0.001,
                    alpha_phi: 0.001,
                    checkpoint_every: 1_000,
                    tail_fraction: 0.2,
                    phi_avg_fraction: 0.2,
                },
            },
            seed: 1,
            repetitions: 100,
        }),
        // desk scale: a tenth of the horizon, so the initial rates are
        // retuned upward to reach the same convergence inside the run
        ("lq-ergodic", "lq-desk") => Ok(ExperimentConfig {
            task: TaskParams::LqErgodic {
                config: LqExperimentConfig {
                    model: crate::lq::default_model(),
                    gamma: 0.1,
                    dt: 0.01,
                    total_time: 1e5,
                    x0: 0.0,
                    alpha_theta: 0.002,
                    alpha_v: 0.002,
                    alpha_phi: 0.004,
                    checkpoint_every: 1_000,
                    tail_fraction: 0.2,
                    phi_avg_fraction: 0.3,
                },
            },
            seed: 1,
            repetitions: 10,
        }),
        ("benchmark", "default") => Ok(ExperimentConfig {
            task: TaskParams::Benchmark {
                config: BenchmarkConfig {
                    lq_model: crate::lq::default_model(),
                    lq_gamma: 0.1,
                    mv_market: GbmMarket {
                        mu: 0.1,
                        sigma: 0.2,
                        r_free: 0.0,
                    },
                    mv_x0: 1.0,
                    mv_z: 1.4,
                    mv_horizon: 1.0,
                    mv_gamma: 0.1,
                },
            },
            seed: 1,
            repetitions: 1,
        }),
        ("gradcheck", "default") => Ok(ExperimentConfig {
            task: TaskParams::Gradcheck {
                config: gradcheck::default_config(),
            },
            seed: 1,
            repetitions: 1,
        }),
        ("pe-check", "default") => Ok(ExperimentConfig {
            task: TaskParams::PeCheck {
                config: pecheck::default_config(),
            },
            seed: 1,
            repetitions: 1,
        }),
        _ => Err(unknown()),
    }
}

pub fn default_preset_name(task: &str) -> &'static str {
    match task {
        "mv-offline" | "mv-online" => "mv-desk",
        "lq-ergodic" => "lq-desk",
        _ => "default",
    }
}

/// One metric observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub task: String,
    /// Repetition index, or `mean` / `sd` / `count` for aggregates,
    /// or `target` for closed-form reference values.
    pub repetition: String,
    pub config_digest: String,
    pub metric: String,
    pub value: f64,
    pub se: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) => f.write_str(&fmt_float(*v)),
            Cell::Text(v) => f.write_str(v),
        }
    }
}

/// A rectangular output table (traces, summaries).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Compact rendering at four significant digits.
    pub fn render_pretty(&self) -> String {
        let mut cols: Vec<Vec<String>> = vec![self.header.clone()];
        for row in &self.rows {
            cols.push(
                row.iter()
                    .map(|c| match c {
                        Cell::Float(v) => format!("{v:.4}"),
                        other => other.to_string(),
                    })
                    .collect(),
            );
        }
        let widths: Vec<usize> = (0..self.header.len())
            .map(|i| {
                cols.iter()
                    .map(|r| r.get(i).map_or(0, |s| s.len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for row in cols {
            let padded: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, s)| format!("{s:>width$}", width = widths[i]))
                .collect();
            out.push_str(padded.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// 17 significant digits, enough to round-trip an `f64` exactly.
pub fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Everything a run produces; file output is a straight serialization.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRow>,
    pub traces: Table,
    pub summary: Table,
    pub manifest: serde_json::Value,
}

impl RunOutput {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("task,repetition,config_digest,metric,value,se\n");
        for row in &self.metrics {
            let se = row.se.map(fmt_float).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                row.task,
                row.repetition,
                row.config_digest,
                row.metric,
                fmt_float(row.value),
                se
            );
        }
        out
    }
}

/// Write `metrics.csv`, `traces.csv`, `summary.csv`, and `manifest.json`.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), out.metrics_csv())?;
    std::fs::write(dir.join("traces.csv"), out.traces.to_csv())?;
    std::fs::write(dir.join("summary.csv"), out.summary.to_csv())?;
    let mut file = std::fs::File::create(dir.join("manifest.json"))?;
    file.write_all(serde_json::to_string_pretty(&out.manifest)?.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

struct RowSink {
    task: String,
    digest: String,
    rows: Vec<MetricsRow>,
}

impl RowSink {
    fn new(task: &str, digest: &str) -> Self {
        Self {
            task: task.to_string(),
            digest: digest.to_string(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, repetition: &str, metric: &str, value: f64, se: Option<f64>) {
        self.rows.push(MetricsRow {
            task: self.task.clone(),
            repetition: repetition.to_string(),
            config_digest: self.digest.clone(),
            metric: metric.to_string(),
            value,
            se,
        });
    }

    /// Per-repetition values followed by mean/sd/count aggregate rows.
    fn push_series(&mut self, metric: &str, values: &[(usize, f64)]) {
        for (rep, v) in values {
            self.push(&rep.to_string(), metric, *v, None);
        }
        let vals: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
        if !vals.is_empty() {
            let (mean, sd) = mean_sd(&vals);
            self.push("mean", metric, mean, None);
            self.push("sd", metric, sd, None);
        }
    }
}

/// Run the configured experiment. `workers`, when given, sizes the worker
/// pool (recorded in the manifest; results do not depend on it).
pub fn run_experiment(
    cfg: &ExperimentConfig,
    workers: Option<usize>,
) -> Result<RunOutput, HarnessError> {
    if cfg.repetitions == 0 {
        return Err(HarnessError::Config(
            "repetitions must be at least 1".into(),
        ));
    }
    if let Some(w) = workers {
        exec::configure_workers(w);
    }
    let digest = cfg.digest();
    let (metrics, traces, summary) = match &cfg.task {
        TaskParams::MvOffline { config, eval_paths } => {
            run_mv(cfg, config, *eval_paths, &digest, false)?
        }
        TaskParams::MvOnline { config, eval_paths } => {
            run_mv(cfg, config, *eval_paths, &digest, true)?
        }
        TaskParams::LqErgodic { config } => run_lq(cfg, config, &digest)?,
        TaskParams::Benchmark { config } => run_benchmark(cfg, config, &digest)?,
        TaskParams::Gradcheck { config } => run_gradcheck(cfg, config, &digest),
        TaskParams::PeCheck { config } => run_pecheck(cfg, config, &digest),
    };
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "config_digest": digest,
        "execution_mode": exec::execution_mode(),
        "workers": workers,
        "timestamp_unix": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    Ok(RunOutput {
        metrics,
        traces,
        summary,
        manifest,
    })
}

type TaskOutput = (Vec<MetricsRow>, Table, Table);

fn run_mv(
    cfg: &ExperimentConfig,
    mv: &MvConfig,
    eval_paths: usize,
    digest: &str,
    online: bool,
) -> Result<TaskOutput, HarnessError> {
    mv.validate()?;
    let master = RandomSource::new(cfg.seed);
    let outcomes = exec::map_indexed(cfg.repetitions, |rep| {
        let rep_source = master.child(rep as u64);
        let trained = if online {
            mv_online_train(mv, rep_source)
        } else {
            mv_offline_train(mv, rep_source)
        };
        trained.and_then(|out| {
            let eval = mv_evaluate_learned(&out, mv, eval_paths, rep_source.child(2))
                .map_err(|_| TrainError::Config("evaluation failed"))?;
            Ok((out, eval))
        })
    });

    let task = cfg.task.name();
    let mut sink = RowSink::new(task, digest);
    let mut traces = Table::new(&[
        "rep",
        "iteration",
        "theta1",
        "theta2",
        "theta3",
        "phi1",
        "phi2",
        "phi3",
        "w",
    ]);
    let mut means = Vec::new();
    let mut variances = Vec::new();
    let mut sharpes = Vec::new();
    for (rep, outcome) in outcomes.iter().enumerate() {
        match outcome {
            Ok((out, eval)) => {
                sink.push(&rep.to_string(), "diverged", 0.0, None);
                sink.push(&rep.to_string(), "mean", eval.mean, None);
                sink.push(&rep.to_string(), "variance", eval.variance, None);
                sink.push(&rep.to_string(), "sharpe", eval.sharpe, None);
                sink.push(&rep.to_string(), "w_final", out.w, None);
                means.push(eval.mean);
                variances.push(eval.variance);
                sharpes.push(eval.sharpe);
                for row in &out.log {
                    traces.rows.push(vec![
                        Cell::Int(rep as i64),
                        Cell::Int(row.iteration as i64),
                        Cell::Float(row.theta[0]),
                        Cell::Float(row.theta[1]),
                        Cell::Float(row.theta[2]),
                        Cell::Float(row.phi[0]),
                        Cell::Float(row.phi[1]),
                        Cell::Float(row.phi[2]),
                        Cell::Float(row.w),
                    ]);
                }
            }
            Err(_) => {
                sink.push(&rep.to_string(), "diverged", 1.0, None);
            }
        }
    }
    sink.push("count", "survivors", means.len() as f64, None);
    let mut summary = Table::new(&[
        "mu",
        "sigma",
        "mean",
        "variance",
        "sharpe",
        "sd_mean",
        "sd_variance",
        "sd_sharpe",
    ]);
    if !means.is_empty() {
        let (m, sm) = mean_sd(&means);
        let (v, sv) = mean_sd(&variances);
        let (s, ss) = mean_sd(&sharpes);
        for (name, value, sd) in [("mean", m, sm), ("variance", v, sv), ("sharpe", s, ss)] {
            sink.push("mean", name, value, None);
            sink.push("sd", name, sd, None);
        }
        summary.rows.push(vec![
            Cell::Float(mv.market.mu),
            Cell::Float(mv.market.sigma),
            Cell::Float(m),
            Cell::Float(v),
            Cell::Float(s),
            Cell::Float(sm),
            Cell::Float(sv),
            Cell::Float(ss),
        ]);
    }
    Ok((sink.rows, traces, summary))
}

fn run_lq(
    cfg: &ExperimentConfig,
    lq: &LqExperimentConfig,
    digest: &str,
) -> Result<TaskOutput, HarnessError> {
    let bench = lq_benchmark_solve(&lq.model, lq.gamma)?;
    let outcomes = lq_experiment(lq, cfg.repetitions, RandomSource::new(cfg.seed));

    let task = cfg.task.name();
    let mut sink = RowSink::new(task, digest);
    for (name, value) in [
        ("k2", bench.k2),
        ("k1", bench.k1),
        ("v", bench.v),
        ("v_tilde", bench.v_tilde),
        ("phi1", bench.policy_slope),
        ("phi2", bench.policy_intercept),
        ("phi3", bench.policy_variance.ln()),
    ] {
        sink.push("target", name, value, None);
    }

    let mut traces = Table::new(&[
        "rep",
        "t",
        "phi1",
        "phi2",
        "phi3",
        "v_est",
        "avg_reward_raw",
    ]);
    let mut phis: [Vec<(usize, f64)>; 3] = Default::default();
    let mut tails = Vec::new();
    let mut survived = 0usize;
    for out in &outcomes {
        let rep = out.rep;
        sink.push(
            &rep.to_string(),
            "diverged",
            if out.diverged { 1.0 } else { 0.0 },
            None,
        );
        if out.diverged {
            continue;
        }
        survived += 1;
        for i in 0..3 {
            phis[i].push((rep, out.phi_tail_avg[i]));
            sink.push(
                &rep.to_string(),
                &format!("phi{}_last", i + 1),
                out.phi[i],
                None,
            );
        }
        tails.push((rep, out.tail_avg_raw));
        sink.push(&rep.to_string(), "v_est", out.v_est, None);
        sink.push(
            &rep.to_string(),
            "running_avg_raw",
            out.running_avg_raw,
            None,
        );
        for row in &out.trace {
            traces.rows.push(vec![
                Cell::Int(rep as i64),
                Cell::Float(row.t),
                Cell::Float(row.phi[0]),
                Cell::Float(row.phi[1]),
                Cell::Float(row.phi[2]),
                Cell::Float(row.v_est),
                Cell::Float(row.avg_reward_raw),
            ]);
        }
    }
    for (i, series) in phis.iter().enumerate() {
        sink.push_series(&format!("phi{}", i + 1), series);
    }
    sink.push_series("tail_avg_raw", &tails);
    sink.push("count", "survivors", survived as f64, None);

    let mut summary = Table::new(&[
        "phi1",
        "phi2",
        "phi3",
        "sd_phi1",
        "sd_phi2",
        "sd_phi3",
        "tail_avg_raw",
        "sd_tail_avg_raw",
        "v_tilde_target",
    ]);
    if survived > 0 {
        let stats: Vec<(f64, f64)> = (0..3)
            .map(|i| mean_sd(&phis[i].iter().map(|(_, v)| *v).collect::<Vec<_>>()))
            .collect();
        let (tm, ts) = mean_sd(&tails.iter().map(|(_, v)| *v).collect::<Vec<_>>());
        summary.rows.push(vec![
            Cell::Float(stats[0].0),
            Cell::Float(stats[1].0),
            Cell::Float(stats[2].0),
            Cell::Float(stats[0].1),
            Cell::Float(stats[1].1),
            Cell::Float(stats[2].1),
            Cell::Float(tm),
            Cell::Float(ts),
            Cell::Float(bench.v_tilde),
        ]);
    }
    Ok((sink.rows, traces, summary))
}

fn run_benchmark(
    cfg: &ExperimentConfig,
    bc: &BenchmarkConfig,
    digest: &str,
) -> Result<TaskOutput, HarnessError> {
    let lq = lq_benchmark_solve(&bc.lq_model, bc.lq_gamma)?;
    let residuals = lq.residuals(&bc.lq_model);
    let oracle = lq_bruteforce_oracle(&bc.lq_model)?;
    let mv = mv_benchmark(&bc.mv_market, bc.mv_x0, bc.mv_z, bc.mv_horizon, bc.mv_gamma)?;

    let mut sink = RowSink::new(cfg.task.name(), digest);
    for (name, value) in [
        ("lq_k2", lq.k2),
        ("lq_k1", lq.k1),
        ("lq_v", lq.v),
        ("lq_v_tilde", lq.v_tilde),
        ("lq_policy_slope", lq.policy_slope),
        ("lq_policy_intercept", lq.policy_intercept),
        ("lq_policy_variance", lq.policy_variance),
        ("lq_residual_1", residuals[0]),
        ("lq_residual_2", residuals[1]),
        ("lq_residual_3", residuals[2]),
        ("lq_oracle_u", oracle.u),
        ("lq_oracle_v_intercept", oracle.v),
        ("lq_oracle_avg_reward", oracle.avg_reward),
        ("mv_w_star", mv.w_star),
        ("mv_variance_no_explore", mv.variance_no_explore),
        ("mv_variance_with_explore", mv.variance_with_explore),
        ("mv_sharpe_no_explore", mv.sharpe_no_explore),
        ("mv_policy_mean_slope", mv.policy_mean_slope),
        ("mv_policy_var_scale", mv.policy_var_scale),
        ("mv_policy_var_rate", mv.policy_var_rate),
    ] {
        sink.push("0", name, value, None);
    }

    let mut summary = Table::new(&[
        "k2",
        "k1",
        "v",
        "v_tilde",
        "u_star",
        "v_star",
        "policy_variance",
        "oracle_v",
        "w_star",
        "var_no_explore",
        "var_with_explore",
    ]);
    summary.rows.push(vec![
        Cell::Float(lq.k2),
        Cell::Float(lq.k1),
        Cell::Float(lq.v),
        Cell::Float(lq.v_tilde),
        Cell::Float(lq.policy_slope),
        Cell::Float(lq.policy_intercept),
        Cell::Float(lq.policy_variance),
        Cell::Float(oracle.avg_reward),
        Cell::Float(mv.w_star),
        Cell::Float(mv.variance_no_explore),
        Cell::Float(mv.variance_with_explore),
    ]);
    Ok((sink.rows, Table::default(), summary))
}

fn run_gradcheck(cfg: &ExperimentConfig, gc: &GradcheckConfig, digest: &str) -> TaskOutput {
    let report = gradcheck_report(gc, RandomSource::new(cfg.seed));
    let mut sink = RowSink::new(cfg.task.name(), digest);
    let mut summary = Table::new(&["toy", "component", "pg_estimate", "fd_estimate", "rel_err"]);
    for row in &report.rows {
        let prefix = format!("{}_{}", row.toy, row.component);
        sink.push(
            "0",
            &format!("{prefix}_pg"),
            row.pg_estimate,
            Some(row.pg_se),
        );
        sink.push("0", &format!("{prefix}_fd"), row.fd_estimate, None);
        sink.push("0", &format!("{prefix}_rel_err"), row.rel_err, None);
        summary.rows.push(vec![
            Cell::Text(row.toy.clone()),
            Cell::Text(row.component.clone()),
            Cell::Float(row.pg_estimate),
            Cell::Float(row.fd_estimate),
            Cell::Float(row.rel_err),
        ]);
    }
    (sink.rows, Table::default(), summary)
}

fn run_pecheck(cfg: &ExperimentConfig, pc: &PeCheckConfig, digest: &str) -> TaskOutput {
    let report = pe_check(pc, RandomSource::new(cfg.seed));
    let mut sink = RowSink::new(cfg.task.name(), digest);
    let mut summary = Table::new(&[
        "t",
        "x",
        "mc_value",
        "mc_se",
        "loss_value",
        "loss_se",
        "td_value",
        "td_se",
        "loss_sigma",
        "td_sigma",
    ]);
    for (i, p) in report.probes.iter().enumerate() {
        let tag = format!("probe{i}");
        sink.push("0", &format!("{tag}_mc"), p.mc_value, Some(p.mc_se));
        sink.push("0", &format!("{tag}_loss"), p.loss_value, Some(p.loss_se));
        sink.push("0", &format!("{tag}_td"), p.td_value, Some(p.td_se));
        summary.rows.push(vec![
            Cell::Float(p.t),
            Cell::Float(p.x),
            Cell::Float(p.mc_value),
            Cell::Float(p.mc_se),
            Cell::Float(p.loss_value),
            Cell::Float(p.loss_se),
            Cell::Float(p.td_value),
            Cell::Float(p.td_se),
            Cell::Float(p.loss_sigma()),
            Cell::Float(p.td_sigma()),
        ]);
    }
    for row in &report.orthogonality {
        let name = format!(
            "orth_{}_c{}",
            match row.test_fn {
                crate::critic::TestFn::Td0 => "td0".to_string(),
                crate::critic::TestFn::TdLambda(l) => format!("tdl{l}"),
                other => format!("{other:?}").to_lowercase(),
            },
            row.component + 1
        );
        sink.push("0", &name, row.mean, Some(row.se));
    }
    (sink.rows, Table::default(), summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable_and_config_sensitive() {
        let a = preset_config("benchmark", "default").unwrap();
        let b = preset_config("benchmark", "default").unwrap();
        assert_eq!(a.digest(), b.digest());
        let mut c = preset_config("benchmark", "default").unwrap();
        c.seed = 2;
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn config_round_trips_through_json() {
        for (task, preset) in [
            ("mv-offline", "mv-desk"),
            ("mv-online", "mv-desk"),
            ("lq-ergodic", "lq-desk"),
            ("benchmark", "default"),
            ("gradcheck", "default"),
            ("pe-check", "default"),
        ] {
            let cfg = preset_config(task, preset).unwrap();
            let json = serde_json::to_string(&cfg).unwrap();
            let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
            assert_eq!(cfg.digest(), back.digest(), "{task}");
            assert_eq!(back.task.name(), task);
        }
        assert!(preset_config("mv-offline", "nope").is_err());
    }

    #[test]
    fn benchmark_task_emits_expected_values() {
        let cfg = preset_config("benchmark", "default").unwrap();
        let out = run_experiment(&cfg, None).unwrap();
        let k2 = out
            .metrics
            .iter()
            .find(|r| r.metric == "lq_k2")
            .expect("k2 row present");
        assert!((k2.value - (-0.82288)).abs() < 1e-5);
        assert_eq!(out.summary.header[0], "k2");
        // residual rows stay tiny
        for r in out
            .metrics
            .iter()
            .filter(|r| r.metric.starts_with("lq_residual"))
        {
            assert!(r.value.abs() < 1e-10);
        }
    }

    #[test]
    fn benchmark_output_is_byte_deterministic() {
        let cfg = preset_config("benchmark", "default").unwrap();
        let a = run_experiment(&cfg, None).unwrap();
        let b = run_experiment(&cfg, None).unwrap();
        assert_eq!(a.metrics_csv(), b.metrics_csv());
        assert_eq!(a.summary.to_csv(), b.summary.to_csv());
        assert_eq!(a.traces.to_csv(), b.traces.to_csv());
    }

    #[test]
    fn aggregates_match_recomputation_from_rows() {
        // tiny lq run: recompute mean/sd of phi1 from per-rep rows
        let mut cfg = preset_config("lq-ergodic", "lq-desk").unwrap();
        if let TaskParams::LqErgodic { config } = &mut cfg.task {
            config.total_time = 20.0;
            config.checkpoint_every = 500;
        }
        cfg.repetitions = 4;
        let out = run_experiment(&cfg, None).unwrap();
        let per_rep: Vec<f64> = out
            .metrics
            .iter()
            .filter(|r| r.metric == "phi1" && r.repetition.parse::<usize>().is_ok())
            .map(|r| r.value)
            .collect();
        assert_eq!(per_rep.len(), 4);
        let (mean, sd) = mean_sd(&per_rep);
        let agg_mean = out
            .metrics
            .iter()
            .find(|r| r.metric == "phi1" && r.repetition == "mean")
            .unwrap()
            .value;
        let agg_sd = out
            .metrics
            .iter()
            .find(|r| r.metric == "phi1" && r.repetition == "sd")
            .unwrap()
            .value;
        assert!((mean - agg_mean).abs() < 1e-12);
        assert!((sd - agg_sd).abs() < 1e-12);
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.0, 1.0, -1.5, 0.1, 1e-300, std::f64::consts::PI] {
            let s = fmt_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(fmt_float(f64::INFINITY), "inf");
        assert_eq!(fmt_float(f64::NAN), "nan");
    }

    #[test]
    fn mv_summary_schema() {
        // minute-scale smoke config
        let mut cfg = preset_config("mv-offline", "mv-desk").unwrap();
        if let TaskParams::MvOffline { config, eval_paths } = &mut cfg.task {
            config.iterations = 20;
            config.batch_size = 4;
            config.dt = 0.05;
            config.training_years = 3;
            config.log_every = 10;
            *eval_paths = 64;
        }
        cfg.repetitions = 2;
        let out = run_experiment(&cfg, None).unwrap();
        assert_eq!(
            out.summary.header,
            vec![
                "mu",
                "sigma",
                "mean",
                "variance",
                "sharpe",
                "sd_mean",
                "sd_variance",
                "sd_sharpe"
            ]
        );
        assert_eq!(out.summary.rows.len(), 1);
        assert_eq!(
            out.traces.header,
            vec![
                "rep",
                "iteration",
                "theta1",
                "theta2",
                "theta3",
                "phi1",
                "phi2",
                "phi3",
                "w"
            ]
        );
        assert!(out.traces.rows.len() >= 2);
        let survivors = out
            .metrics
            .iter()
            .find(|r| r.metric == "survivors")
            .unwrap();
        assert_eq!(survivors.value, 2.0);
    }
}
