//! Policy-gradient verification: the Monte-Carlo estimator against central
//! finite differences of the simulated objective under common random
//! numbers.
//!
//! Two toy configurations are checked: the portfolio task (entropy-
//! penalized minimization, no discounting) and an episodic discounted
//! linear-quadratic task. In both, the critic is set to the exact minimizer
//! of the empirical martingale loss over a fitting batch, so estimator
//! error is not confounded with critic error; the finite-difference side
//! re-simulates the objective at shifted policy parameters reusing the
//! estimator batch's random streams.

use crate::actor::{pg_offline_estimate, Baseline};
use crate::critic::TestFn;
use crate::exec;
use crate::policy::{LqPolicy, MvPolicy, PolicyModel, RegularizerKind};
use crate::rng::RandomSource;
use crate::sim::{rollout_episode, Environment, GbmMarket, LqModel, TimeGrid, Trajectory};
use crate::value::{MvValue, ValueModel};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GradcheckConfig {
    /// Episodes for the estimator and for each finite-difference corner.
    pub episodes: usize,
    /// Central-difference step on each policy component.
    pub fd_step: f64,
    /// Episodes in the critic-fitting batch.
    pub pe_episodes: usize,
    pub mv: MvToy,
    pub lq: LqToy,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MvToy {
    pub market: GbmMarket,
    pub x0: f64,
    pub w: f64,
    pub horizon: f64,
    pub dt: f64,
    pub gamma: f64,
    pub phi0: [f64; 3],
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LqToy {
    pub model: LqModel,
    pub x0: f64,
    pub beta: f64,
    pub horizon: f64,
    pub dt: f64,
    pub gamma: f64,
    pub phi0: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub toy: String,
    pub component: String,
    pub pg_estimate: f64,
    pub pg_se: f64,
    pub fd_estimate: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.rel_err))
    }
}

pub fn default_config() -> GradcheckConfig {
    GradcheckConfig {
        episodes: 10_000,
        fd_step: 1e-2,
        pe_episodes: 8_000,
        mv: MvToy {
            market: GbmMarket {
                mu: 0.3,
                sigma: 0.2,
                r_free: 0.0,
            },
            x0: 1.0,
            w: 0.5,
            horizon: 1.0,
            dt: 0.1,
            gamma: 0.1,
            phi0: [0.8, -3.0, 1.2],
        },
        lq: LqToy {
            model: LqModel {
                a: -1.0,
                b: 0.5,
                c: 0.0,
                d: 1.0,
                m: 2.0,
                r: 1.0,
                n: 2.0,
                p: 1.0,
                q: 2.0,
            },
            x0: 0.5,
            beta: 0.5,
            horizon: 1.0,
            dt: 0.1,
            gamma: 0.1,
            phi0: [0.3, -0.5, -1.0],
        },
    }
}

/// Run both toys; `source` seeds everything (critic fit, estimator batch,
/// finite-difference batches).
pub fn gradcheck_report(cfg: &GradcheckConfig, source: RandomSource) -> GradcheckReport {
    let mut report = GradcheckReport::default();
    mv_check(cfg, source.child(1), &mut report);
    lq_check(cfg, source.child(2), &mut report);
    report
}

fn batch_rollout<P: PolicyModel>(
    market: &impl Environment,
    policy: &P,
    grid: &TimeGrid,
    x0: f64,
    n: usize,
    source: RandomSource,
) -> Vec<Trajectory> {
    exec::map_indexed(n, |i| {
        rollout_episode(
            market,
            policy,
            RegularizerKind::Integrated,
            grid,
            x0,
            &mut source.child(i as u64).rng(),
        )
        .expect("toy episode stays finite")
    })
}

fn mv_check(cfg: &GradcheckConfig, source: RandomSource, report: &mut GradcheckReport) {
    let toy = &cfg.mv;
    let grid = TimeGrid::from_horizon(0.0, toy.horizon, toy.dt).expect("valid toy grid");
    let policy = MvPolicy::new(toy.phi0, toy.w, toy.horizon);
    let gamma_signed = -toy.gamma;

    // critic: exact martingale-loss minimizer over a fitting batch
    let fit_batch = batch_rollout(
        &toy.market,
        &policy,
        &grid,
        toy.x0,
        cfg.pe_episodes,
        source.child(0),
    );
    let theta = fit_mv_critic(&fit_batch, toy.w, toy.horizon, gamma_signed);
    // z = w: the value family's additive constant vanishes
    let value = MvValue::new(theta, toy.w, toy.w, toy.horizon);

    // estimator batch; the finite-difference corners reuse the same
    // streams so both routes see the same episode noise
    let batch = batch_rollout(
        &toy.market,
        &policy,
        &grid,
        toy.x0,
        cfg.episodes,
        source.child(1),
    );
    let est = pg_offline_estimate(
        &value,
        &policy,
        RegularizerKind::Integrated,
        &batch,
        gamma_signed,
        0.0,
        TestFn::Zero,
        Baseline::Zero,
    )
    .expect("nonempty batch");

    // simulated objective under common random numbers:
    // mean of (x_T - w)^2 - gamma * sum H dt
    let fd_source = source.child(1);
    let objective = |phi: [f64; 3]| -> f64 {
        let p = MvPolicy::new(phi, toy.w, toy.horizon);
        let sum: f64 = exec::map_indexed(cfg.episodes, |i| {
            let traj = rollout_episode(
                &toy.market,
                &p,
                RegularizerKind::Integrated,
                &grid,
                toy.x0,
                &mut fd_source.child(i as u64).rng(),
            )
            .expect("toy episode stays finite");
            let y = traj.terminal_state() - toy.w;
            let entropy_sum: f64 = traj.regularizers.iter().sum::<f64>() * toy.dt;
            y * y - toy.gamma * entropy_sum
        })
        .into_iter()
        .sum();
        sum / cfg.episodes as f64
    };
    push_rows(
        report,
        "mv",
        toy.phi0,
        cfg.fd_step,
        est.g,
        est.se,
        objective,
    );
}

fn lq_check(cfg: &GradcheckConfig, source: RandomSource, report: &mut GradcheckReport) {
    let toy = &cfg.lq;
    let grid = TimeGrid::from_horizon(0.0, toy.horizon, toy.dt).expect("valid toy grid");
    let policy = LqPolicy::new(toy.phi0);
    let gamma_signed = toy.gamma;

    let fit_batch = batch_rollout(
        &toy.model,
        &policy,
        &grid,
        toy.x0,
        cfg.pe_episodes,
        source.child(0),
    );
    let theta = fit_lq_critic(&fit_batch, toy.horizon, gamma_signed, toy.beta);
    let value = LqEpisodicValue {
        theta,
        horizon: toy.horizon,
    };

    let batch = batch_rollout(
        &toy.model,
        &policy,
        &grid,
        toy.x0,
        cfg.episodes,
        source.child(1),
    );
    let est = pg_offline_estimate(
        &value,
        &policy,
        RegularizerKind::Integrated,
        &batch,
        gamma_signed,
        toy.beta,
        TestFn::Zero,
        Baseline::Zero,
    )
    .expect("nonempty batch");

    // objective: discounted running reward plus entropy bonus, zero
    // terminal payoff
    let fd_source = source.child(1);
    let objective = |phi: [f64; 3]| -> f64 {
        let p = LqPolicy::new(phi);
        let sum: f64 = exec::map_indexed(cfg.episodes, |i| {
            let traj = rollout_episode(
                &toy.model,
                &p,
                RegularizerKind::Integrated,
                &grid,
                toy.x0,
                &mut fd_source.child(i as u64).rng(),
            )
            .expect("toy episode stays finite");
            let mut total = 0.0;
            for k in 0..traj.n_steps() {
                let s = traj.step_obs(k);
                total += (-toy.beta * s.t).exp() * (s.r + toy.gamma * s.p) * s.dt;
            }
            total
        })
        .into_iter()
        .sum();
        sum / cfg.episodes as f64
    };
    push_rows(
        report,
        "lq",
        toy.phi0,
        cfg.fd_step,
        est.g,
        est.se,
        objective,
    );
}

fn push_rows(
    report: &mut GradcheckReport,
    toy: &str,
    phi0: [f64; 3],
    h: f64,
    g: [f64; 3],
    se: [f64; 3],
    objective: impl Fn([f64; 3]) -> f64,
) {
    for i in 0..3 {
        let mut hi = phi0;
        hi[i] += h;
        let mut lo = phi0;
        lo[i] -= h;
        let fd = (objective(hi) - objective(lo)) / (2.0 * h);
        let rel_err = (g[i] - fd).abs() / fd.abs().max(1e-12);
        report.rows.push(GradcheckRow {
            toy: toy.to_string(),
            component: format!("phi{}", i + 1),
            pg_estimate: g[i],
            pg_se: se[i],
            fd_estimate: fd,
            rel_err,
        });
    }
}

/// Exact minimizer of the empirical martingale loss for the portfolio
/// family: profile least squares in `(theta1, theta2)` (linear given
/// `theta3`) with a grid plus golden-section search over `theta3`.
fn fit_mv_critic(batch: &[Trajectory], w: f64, horizon: f64, gamma_signed: f64) -> [f64; 3] {
    let k_steps = batch[0].n_steps();
    let dt = batch[0].grid.dt;
    let n = batch.len() as f64;
    // per-step sufficient statistics over episodes
    let mut a_sum = vec![0.0; k_steps];
    let mut b_sum = vec![0.0; k_steps];
    let mut c_sum = vec![0.0; k_steps];
    let mut d_sum = vec![0.0; k_steps];
    let mut e_sum = vec![0.0; k_steps];
    for traj in batch {
        let y_term = traj.terminal_state() - w;
        let h_term = y_term * y_term;
        let mut suffix = 0.0;
        let mut targets = vec![0.0; k_steps];
        for k in (0..k_steps).rev() {
            suffix += gamma_signed * traj.regularizers[k] * dt;
            targets[k] = h_term + suffix;
        }
        for k in 0..k_steps {
            let y = traj.states[k] - w;
            let y2 = y * y;
            let g = targets[k];
            a_sum[k] += g;
            b_sum[k] += y2;
            c_sum[k] += g * g;
            d_sum[k] += g * y2;
            e_sum[k] += y2 * y2;
        }
    }
    let times: Vec<f64> = (0..k_steps).map(|k| batch[0].time(k)).collect();
    let u1: Vec<f64> = times.iter().map(|t| t - horizon).collect();
    let u2: Vec<f64> = times.iter().map(|t| t * t - horizon * horizon).collect();
    let m11: f64 = n * u1.iter().map(|v| v * v).sum::<f64>();
    let m12: f64 = n * u1.iter().zip(&u2).map(|(a, b)| a * b).sum::<f64>();
    let m22: f64 = n * u2.iter().map(|v| v * v).sum::<f64>();
    let det = m11 * m22 - m12 * m12;

    // residual sum of squares after profiling out the linear block
    let sse = |theta3: f64| -> (f64, f64, f64) {
        let mut rhs1 = 0.0;
        let mut rhs2 = 0.0;
        let mut bb = 0.0;
        for k in 0..k_steps {
            let e = (-theta3 * (horizon - times[k])).exp();
            let b_k = a_sum[k] - e * b_sum[k];
            rhs1 += u1[k] * b_k;
            rhs2 += u2[k] * b_k;
            bb += c_sum[k] - 2.0 * e * d_sum[k] + e * e * e_sum[k];
        }
        let theta1 = (m22 * rhs1 - m12 * rhs2) / det;
        let theta2 = (m11 * rhs2 - m12 * rhs1) / det;
        (bb - theta1 * rhs1 - theta2 * rhs2, theta1, theta2)
    };

    let (mut lo, mut hi) = (-10.0, 10.0);
    let grid_n = 400;
    let mut best = lo;
    let mut best_sse = f64::INFINITY;
    for i in 0..=grid_n {
        let t3 = lo + (hi - lo) * i as f64 / grid_n as f64;
        let (s, _, _) = sse(t3);
        if s < best_sse {
            best_sse = s;
            best = t3;
        }
    }
    let h = (hi - lo) / grid_n as f64;
    lo = best - h;
    hi = best + h;
    let inv_phi = 0.618_033_988_749_894_9;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = sse(c).0;
    let mut fd = sse(d).0;
    while hi - lo > 1e-9 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = sse(c).0;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = sse(d).0;
        }
    }
    let theta3 = 0.5 * (lo + hi);
    let (_, theta1, theta2) = sse(theta3);
    [theta1, theta2, theta3]
}

/// Exact minimizer of the empirical (discounted) martingale loss for the
/// linear episodic family: one 6x6 normal-equation solve.
fn fit_lq_critic(batch: &[Trajectory], horizon: f64, gamma_signed: f64, beta: f64) -> [f64; 6] {
    let probe = LqEpisodicValue {
        theta: [0.0; 6],
        horizon,
    };
    let mut xtx = vec![vec![0.0; 6]; 6];
    let mut xty = vec![0.0; 6];
    for traj in batch {
        let k_steps = traj.n_steps();
        let dt = traj.grid.dt;
        let mut suffix = 0.0;
        let mut targets = vec![0.0; k_steps];
        for k in (0..k_steps).rev() {
            let s = traj.step_obs(k);
            suffix += (-beta * s.t).exp() * (s.r + gamma_signed * s.p) * dt;
            targets[k] = suffix; // zero terminal payoff
        }
        for k in 0..k_steps {
            let t = traj.time(k);
            let disc = (-beta * t).exp();
            let f = probe.grad_theta(t, traj.states[k]);
            for i in 0..6 {
                let wi = disc * f[i];
                xty[i] += wi * targets[k];
                for j in 0..6 {
                    xtx[i][j] += wi * disc * f[j];
                }
            }
        }
    }
    let sol = crate::critic::solve_linear(&xtx, &xty).expect("regressors span the family");
    let mut theta = [0.0; 6];
    theta.copy_from_slice(&sol);
    theta
}

/// Episodic quadratic value family for the discounted toy:
/// `J = 0.5 (a1 tau + a2 tau^2) x^2 + (b1 tau + b2 tau^2) x + c1 tau +
/// c2 tau^2` with `tau = T - t`, so the zero terminal payoff holds for
/// every parameter value.
#[derive(Clone, Copy, Debug)]
pub struct LqEpisodicValue {
    pub theta: [f64; 6],
    pub horizon: f64,
}

impl ValueModel for LqEpisodicValue {
    type Grad = [f64; 6];

    fn eval(&self, t: f64, x: f64) -> f64 {
        let tau = self.horizon - t;
        let a = self.theta[0] * tau + self.theta[1] * tau * tau;
        let b = self.theta[2] * tau + self.theta[3] * tau * tau;
        let c = self.theta[4] * tau + self.theta[5] * tau * tau;
        0.5 * a * x * x + b * x + c
    }

    fn grad_theta(&self, t: f64, x: f64) -> [f64; 6] {
        let tau = self.horizon - t;
        let x2 = 0.5 * x * x;
        [
            x2 * tau,
            x2 * tau * tau,
            x * tau,
            x * tau * tau,
            tau,
            tau * tau,
        ]
    }

    fn params(&self) -> [f64; 6] {
        self.theta
    }

    fn set_params(&mut self, p: [f64; 6]) {
        self.theta = p;
    }
}
