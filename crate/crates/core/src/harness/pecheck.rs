//! Policy-evaluation verification on a fixed portfolio policy.
//!
//! Two critics learn the value of the same frozen policy, one by
//! martingale-loss descent, one by the TD(0) orthogonality update. Their
//! fitted values are probed at a handful of `(t, x)` points and compared
//! against a direct Monte-Carlo estimate of the objective started at each
//! probe. At the TD fixed point the orthogonality vector itself is checked
//! against zero.

use crate::critic::{martingale_loss_delta, pe_orthogonality_delta, TestFn};
use crate::exec;
use crate::param::ParamVec;
use crate::policy::{MvPolicy, RegularizerKind};
use crate::rng::RandomSource;
use crate::schedule::Schedule;
use crate::sim::{rollout_episode, GbmMarket, TimeGrid};
use crate::value::{MvValue, ValueModel};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PeCheckConfig {
    pub market: GbmMarket,
    pub x0: f64,
    pub z: f64,
    pub w: f64,
    pub horizon: f64,
    pub dt: f64,
    pub gamma: f64,
    /// Frozen policy under evaluation.
    pub phi0: [f64; 3],
    /// Monte-Carlo episodes per probe point.
    pub mc_episodes: usize,
    /// Training episodes per critic run.
    pub pe_episodes: usize,
    /// Independent critic runs (their spread gives the PE standard error).
    pub pe_runs: usize,
    pub alpha_loss: f64,
    pub alpha_td: f64,
    /// Decay exponent of the critic step size (zero keeps it constant;
    /// the tail average of the iterates is returned either way).
    pub pe_decay_exponent: f64,
    /// Half-width of the uniform random initialization of each critic run.
    pub init_spread: f64,
    /// Fresh episodes for the orthogonality check at the fitted parameters.
    pub orth_episodes: usize,
    pub probes: Vec<(f64, f64)>,
}

pub fn default_config() -> PeCheckConfig {
    PeCheckConfig {
        market: GbmMarket {
            mu: 0.3,
            sigma: 0.2,
            r_free: 0.0,
        },
        x0: 1.0,
        z: 0.0,
        w: 0.0,
        horizon: 1.0,
        dt: 0.02,
        gamma: 0.1,
        phi0: [0.2, 0.0, 0.2],
        mc_episodes: 30_000,
        pe_episodes: 600_000,
        pe_runs: 8,
        alpha_loss: 1.0,
        alpha_td: 1.0,
        pe_decay_exponent: 0.51,
        init_spread: 0.5,
        orth_episodes: 1_000,
        probes: vec![(0.0, 1.0), (0.2, 0.7), (0.4, 1.3), (0.6, 1.0), (0.8, 1.5)],
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ProbeRow {
    pub t: f64,
    pub x: f64,
    pub mc_value: f64,
    pub mc_se: f64,
    pub loss_value: f64,
    pub loss_se: f64,
    pub td_value: f64,
    pub td_se: f64,
}

impl ProbeRow {
    /// |PE - MC| in units of the combined standard error, for each method.
    pub fn loss_sigma(&self) -> f64 {
        (self.loss_value - self.mc_value).abs() / (self.loss_se.powi(2) + self.mc_se.powi(2)).sqrt()
    }

    pub fn td_sigma(&self) -> f64 {
        (self.td_value - self.mc_value).abs() / (self.td_se.powi(2) + self.mc_se.powi(2)).sqrt()
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OrthRow {
    pub test_fn: TestFn,
    pub component: usize,
    pub mean: f64,
    pub se: f64,
}

#[derive(Clone, Debug)]
pub struct PeCheckReport {
    pub probes: Vec<ProbeRow>,
    /// Orthogonality vector at the TD-fitted parameters, for TD(0) and
    /// TD(lambda = 0.5) test functions.
    pub orthogonality: Vec<OrthRow>,
    pub theta_loss: [f64; 3],
    pub theta_td: [f64; 3],
}

fn policy_of(cfg: &PeCheckConfig) -> MvPolicy {
    MvPolicy::new(cfg.phi0, cfg.w, cfg.horizon)
}

fn value_of(cfg: &PeCheckConfig, theta: [f64; 3]) -> MvValue {
    MvValue::new(theta, cfg.w, cfg.z, cfg.horizon)
}

enum PeMethod {
    MartingaleLoss,
    Td0,
}

/// One critic run; returns the tail average of the iterates (the
/// averaging damps both the remaining stochastic noise and the transient
/// of the schedule).
///
/// Each run starts from its own random initialization. Runs that have
/// converged forget it; runs that have not spread out, so the across-run
/// standard error honestly covers any remaining transient.
fn fit(cfg: &PeCheckConfig, method: &PeMethod, source: RandomSource) -> [f64; 3] {
    let grid = TimeGrid::from_horizon(0.0, cfg.horizon, cfg.dt).expect("valid grid");
    let policy = policy_of(cfg);
    let schedule = Schedule::Episodic {
        exponent: cfg.pe_decay_exponent,
    };
    let mut init_rng = source.child(0).rng();
    let theta0 = [
        init_rng.random_range(-cfg.init_spread..cfg.init_spread),
        init_rng.random_range(-cfg.init_spread..cfg.init_spread),
        init_rng.random_range(-cfg.init_spread..cfg.init_spread),
    ];
    let mut value = value_of(cfg, theta0);
    let tail_start = cfg.pe_episodes / 2;
    let mut tail_sum = [0.0; 3];
    let mut tail_count = 0usize;
    for j in 1..=cfg.pe_episodes {
        let traj = rollout_episode(
            &cfg.market,
            &policy,
            RegularizerKind::Integrated,
            &grid,
            cfg.x0,
            &mut source.child(1 + j as u64).rng(),
        )
        .expect("episode stays finite");
        let (alpha, d) = match method {
            PeMethod::MartingaleLoss => (
                cfg.alpha_loss,
                martingale_loss_delta(&value, &traj, -cfg.gamma, 0.0, |x| value.terminal(x)),
            ),
            PeMethod::Td0 => (
                cfg.alpha_td,
                pe_orthogonality_delta(&value, &traj, TestFn::Td0, -cfg.gamma, 0.0)
                    .expect("Td0 valid for xi"),
            ),
        };
        let l = schedule.eval(j as f64).expect("j >= 1");
        let mut theta = value.params();
        theta.axpy(l * alpha, &d);
        value.set_params(theta);
        if j > tail_start {
            tail_sum.axpy(1.0, &theta);
            tail_count += 1;
        }
    }
    let mut avg = tail_sum;
    avg.scale(1.0 / tail_count as f64);
    avg
}

/// Direct Monte-Carlo estimate of the objective from `(t, x)`:
/// `(X_T - w)^2 - gamma * int H dt - (w - z)^2`.
fn mc_probe(cfg: &PeCheckConfig, t: f64, x: f64, source: RandomSource) -> (f64, f64) {
    let steps = ((cfg.horizon - t) / cfg.dt).round() as usize;
    let grid = TimeGrid::with_steps(t, cfg.dt, steps).expect("valid grid");
    let policy = policy_of(cfg);
    let wz = cfg.w - cfg.z;
    let values: Vec<f64> = exec::map_indexed(cfg.mc_episodes, |i| {
        let traj = rollout_episode(
            &cfg.market,
            &policy,
            RegularizerKind::Integrated,
            &grid,
            x,
            &mut source.child(i as u64).rng(),
        )
        .expect("episode stays finite");
        let y = traj.terminal_state() - cfg.w;
        let entropy_sum: f64 = traj.regularizers.iter().sum::<f64>() * cfg.dt;
        y * y - cfg.gamma * entropy_sum - wz * wz
    });
    mean_se(&values)
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn pe_check(cfg: &PeCheckConfig, source: RandomSource) -> PeCheckReport {
    // independent critic runs, both methods on disjoint streams
    let loss_thetas: Vec<[f64; 3]> = exec::map_indexed(cfg.pe_runs, |r| {
        fit(cfg, &PeMethod::MartingaleLoss, source.child(100 + r as u64))
    });
    let td_thetas: Vec<[f64; 3]> = exec::map_indexed(cfg.pe_runs, |r| {
        fit(cfg, &PeMethod::Td0, source.child(200 + r as u64))
    });

    let probe_stats = |thetas: &[[f64; 3]], t: f64, x: f64| -> (f64, f64) {
        let vals: Vec<f64> = thetas
            .iter()
            .map(|&theta| value_of(cfg, theta).eval(t, x))
            .collect();
        mean_se(&vals)
    };

    let probes = cfg
        .probes
        .iter()
        .enumerate()
        .map(|(i, &(t, x))| {
            let (mc_value, mc_se) = mc_probe(cfg, t, x, source.child(300 + i as u64));
            let (loss_value, loss_se) = probe_stats(&loss_thetas, t, x);
            let (td_value, td_se) = probe_stats(&td_thetas, t, x);
            ProbeRow {
                t,
                x,
                mc_value,
                mc_se,
                loss_value,
                loss_se,
                td_value,
                td_se,
            }
        })
        .collect();

    // orthogonality at the mean TD solution
    let mut theta_td = [0.0; 3];
    for theta in &td_thetas {
        theta_td.axpy(1.0 / cfg.pe_runs as f64, theta);
    }
    let mut theta_loss = [0.0; 3];
    for theta in &loss_thetas {
        theta_loss.axpy(1.0 / cfg.pe_runs as f64, theta);
    }

    let value = value_of(cfg, theta_td);
    let policy = policy_of(cfg);
    let grid = TimeGrid::from_horizon(0.0, cfg.horizon, cfg.dt).expect("valid grid");
    let orth_source = source.child(400);
    let mut orthogonality = Vec::new();
    for spec in [TestFn::Td0, TestFn::TdLambda(0.5)] {
        let deltas: Vec<[f64; 3]> = exec::map_indexed(cfg.orth_episodes, |i| {
            let traj = rollout_episode(
                &cfg.market,
                &policy,
                RegularizerKind::Integrated,
                &grid,
                cfg.x0,
                &mut orth_source.child(i as u64).rng(),
            )
            .expect("episode stays finite");
            pe_orthogonality_delta(&value, &traj, spec, -cfg.gamma, 0.0).expect("valid xi")
        });
        for c in 0..3 {
            let vals: Vec<f64> = deltas.iter().map(|d| d[c]).collect();
            let (mean, se) = mean_se(&vals);
            orthogonality.push(OrthRow {
                test_fn: spec,
                component: c,
                mean,
                se,
            });
        }
    }

    PeCheckReport {
        probes,
        orthogonality,
        theta_loss,
        theta_td,
    }
}
