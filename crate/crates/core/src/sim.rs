//! Time discretization, environments, and episode rollout.
//!
//! Environments expose a single-step transition `(x', r) = step(t, x, a)`
//! over one mesh interval. The market uses exact log-normal gross returns
//! (no discretization error in the asset itself), while the
//! linear-quadratic state uses an Euler step. Rollouts are pure functions
//! of `(env, policy, grid, rng)` and can run concurrently across episodes
//! with distinct random streams.

use crate::policy::{PolicyModel, RegularizerKind};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("episode diverged at step {step}")]
    EpisodeDiverged {
        step: usize,
        partial: Option<Box<Trajectory>>,
    },
}

/// Equally spaced mesh `t_k = t0 + k*dt`, `k = 0..=n_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    /// Grid covering `[t0, t0 + horizon]` with `floor(horizon/dt)` steps.
    pub fn from_horizon(t0: f64, horizon: f64, dt: f64) -> Result<Self, SimError> {
        if !(dt > 0.0) || !dt.is_finite() || !horizon.is_finite() || !t0.is_finite() {
            return Err(SimError::InvalidInput(
                "time grid requires finite t0, horizon and dt > 0",
            ));
        }
        let n_steps = (horizon / dt + 1e-9).floor() as usize;
        if n_steps < 1 {
            return Err(SimError::InvalidInput(
                "time grid requires at least one step",
            ));
        }
        Ok(Self {
            t0,
            horizon,
            dt,
            n_steps,
        })
    }

    /// Grid with an explicit step count; `n_steps = 0` yields a degenerate
    /// zero-horizon grid (useful for edge cases, not for simulation).
    pub fn with_steps(t0: f64, dt: f64, n_steps: usize) -> Result<Self, SimError> {
        if !(dt > 0.0) || !dt.is_finite() || !t0.is_finite() {
            return Err(SimError::InvalidInput(
                "time grid requires finite t0 and dt > 0",
            ));
        }
        Ok(Self {
            t0,
            horizon: n_steps as f64 * dt,
            dt,
            n_steps,
        })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn terminal_time(&self) -> f64 {
        self.time(self.n_steps)
    }
}

/// One environment transition: the state after `dt` and the instantaneous
/// running reward rate at the step's left endpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvStep {
    pub next_state: f64,
    pub reward: f64,
}

/// A single-step environment simulator.
///
/// `k` is the step index within the current episode (replay-style
/// environments index into stored data with it; live environments ignore
/// it).
pub trait Environment: Sync {
    fn step(
        &self,
        k: usize,
        t: f64,
        x: f64,
        a: f64,
        dt: f64,
        rng: &mut impl Rng,
    ) -> Result<EnvStep, SimError>;
}

fn check_finite(vals: &[f64]) -> Result<(), SimError> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SimError::InvalidInput("non-finite input"))
    }
}

/// Market with one risky asset following a geometric Brownian motion and a
/// risk-free account. The state is discounted wealth; the action is the
/// dollar amount held in the risky asset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbmMarket {
    pub mu: f64,
    pub sigma: f64,
    pub r_free: f64,
}

impl GbmMarket {
    /// Discounted gross return over `dt` given a standard normal draw:
    /// `exp((mu - r_free - sigma^2/2) dt + sigma sqrt(dt) z)`.
    pub fn gross_return(&self, dt: f64, z: f64) -> f64 {
        ((self.mu - self.r_free - 0.5 * self.sigma * self.sigma) * dt + self.sigma * dt.sqrt() * z)
            .exp()
    }

    /// Wealth transition with an explicit noise draw: `x + a*(G(z) - 1)`.
    /// The portfolio task has no running reward.
    pub fn step_with_z(&self, x: f64, a: f64, dt: f64, z: f64) -> Result<EnvStep, SimError> {
        check_finite(&[x, a, self.mu, self.sigma, self.r_free, dt, z])?;
        if !(self.sigma > 0.0) || !(dt > 0.0) {
            return Err(SimError::InvalidInput(
                "gbm step requires sigma > 0 and dt > 0",
            ));
        }
        Ok(EnvStep {
            next_state: x + a * (self.gross_return(dt, z) - 1.0),
            reward: 0.0,
        })
    }
}

impl Environment for GbmMarket {
    fn step(
        &self,
        _k: usize,
        _t: f64,
        x: f64,
        a: f64,
        dt: f64,
        rng: &mut impl Rng,
    ) -> Result<EnvStep, SimError> {
        let z: f64 = rng.sample(StandardNormal);
        self.step_with_z(x, a, dt, z)
    }
}

/// Scalar linear-quadratic model: dynamics
/// `dX = (a_x X + b_a A) dt + (c_x X + d_a A) dW` and running reward
/// `r(x,a) = -(m/2 x^2 + r x a + n/2 a^2 + p x + q a)`.
///
/// Field names follow the conventional coefficient letters: `a, b` scale
/// state and action in the drift, `c, d` in the diffusion, and
/// `m, r, n, p, q` are the reward coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub m: f64,
    pub r: f64,
    pub n: f64,
    pub p: f64,
    pub q: f64,
}

impl LqModel {
    pub fn reward(&self, x: f64, a: f64) -> f64 {
        -(0.5 * self.m * x * x + self.r * x * a + 0.5 * self.n * a * a + self.p * x + self.q * a)
    }

    pub fn drift(&self, x: f64, a: f64) -> f64 {
        self.a * x + self.b * a
    }

    pub fn diffusion(&self, x: f64, a: f64) -> f64 {
        self.c * x + self.d * a
    }

    /// Euler transition with an explicit noise draw.
    pub fn step_with_z(&self, x: f64, a: f64, dt: f64, z: f64) -> Result<EnvStep, SimError> {
        check_finite(&[x, a, dt, z])?;
        if !(dt > 0.0) {
            return Err(SimError::InvalidInput("lq step requires dt > 0"));
        }
        Ok(EnvStep {
            next_state: x + self.drift(x, a) * dt + self.diffusion(x, a) * dt.sqrt() * z,
            reward: self.reward(x, a),
        })
    }
}

impl Environment for LqModel {
    fn step(
        &self,
        _k: usize,
        _t: f64,
        x: f64,
        a: f64,
        dt: f64,
        rng: &mut impl Rng,
    ) -> Result<EnvStep, SimError> {
        let z: f64 = rng.sample(StandardNormal);
        self.step_with_z(x, a, dt, z)
    }
}

/// Market replay over a stored sequence of gross returns; step `k` of an
/// episode applies return `returns[start + k]`. Used to bootstrap training
/// episodes out of one long simulated price history.
#[derive(Clone, Copy, Debug)]
pub struct ReplayMarket<'a> {
    pub returns: &'a [f64],
    pub start: usize,
}

impl Environment for ReplayMarket<'_> {
    fn step(
        &self,
        k: usize,
        _t: f64,
        x: f64,
        a: f64,
        _dt: f64,
        _rng: &mut impl Rng,
    ) -> Result<EnvStep, SimError> {
        let g = self
            .returns
            .get(self.start + k)
            .copied()
            .ok_or(SimError::InvalidInput("replay window out of range"))?;
        Ok(EnvStep {
            next_state: x + a * (g - 1.0),
            reward: 0.0,
        })
    }
}

/// One sampled episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    /// `n_steps + 1` states.
    pub states: Vec<f64>,
    /// `n_steps` sampled actions.
    pub actions: Vec<f64>,
    /// `n_steps` instantaneous reward rates.
    pub rewards: Vec<f64>,
    /// `n_steps` regularizer values `p(t_k, x_k, a_k, pi)`.
    pub regularizers: Vec<f64>,
}

/// Everything one transition contributes to an update.
#[derive(Clone, Copy, Debug)]
pub struct StepObs {
    pub t: f64,
    pub dt: f64,
    pub x: f64,
    pub a: f64,
    pub r: f64,
    /// Regularizer value recorded when the step was generated.
    pub p: f64,
    pub x_next: f64,
}

impl Trajectory {
    fn with_capacity(grid: TimeGrid) -> Self {
        let k = grid.n_steps;
        Self {
            grid,
            states: Vec::with_capacity(k + 1),
            actions: Vec::with_capacity(k),
            rewards: Vec::with_capacity(k),
            regularizers: Vec::with_capacity(k),
        }
    }

    /// Build from raw parts, checking length consistency.
    pub fn from_parts(
        grid: TimeGrid,
        states: Vec<f64>,
        actions: Vec<f64>,
        rewards: Vec<f64>,
        regularizers: Vec<f64>,
    ) -> Result<Self, SimError> {
        let k = actions.len();
        if states.len() != k + 1 || rewards.len() != k || regularizers.len() != k {
            return Err(SimError::InvalidInput("inconsistent trajectory lengths"));
        }
        Ok(Self {
            grid,
            states,
            actions,
            rewards,
            regularizers,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.actions.len()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.grid.time(k)
    }

    pub fn terminal_state(&self) -> f64 {
        *self
            .states
            .last()
            .expect("trajectory has at least one state")
    }

    pub fn step_obs(&self, k: usize) -> StepObs {
        StepObs {
            t: self.time(k),
            dt: self.grid.dt,
            x: self.states[k],
            a: self.actions[k],
            r: self.rewards[k],
            p: self.regularizers[k],
            x_next: self.states[k + 1],
        }
    }
}

/// Sample one episode: actions drawn from the policy at each grid point,
/// states advanced by the environment, rewards and regularizer values
/// recorded. A non-finite state aborts with the partial trajectory.
pub fn rollout_episode<E: Environment, P: PolicyModel, R: Rng>(
    env: &E,
    policy: &P,
    kind: RegularizerKind,
    grid: &TimeGrid,
    x0: f64,
    rng: &mut R,
) -> Result<Trajectory, SimError> {
    if !x0.is_finite() {
        return Err(SimError::InvalidInput("non-finite initial state"));
    }
    let mut traj = Trajectory::with_capacity(*grid);
    traj.states.push(x0);
    let mut x = x0;
    for k in 0..grid.n_steps {
        let t = grid.time(k);
        let a = policy.sample(t, x, rng);
        let step = env.step(k, t, x, a, grid.dt, rng)?;
        if !step.next_state.is_finite() || !a.is_finite() {
            return Err(SimError::EpisodeDiverged {
                step: k,
                partial: Some(Box::new(traj)),
            });
        }
        traj.actions.push(a);
        traj.rewards.push(step.reward);
        traj.regularizers.push(policy.reg_value(kind, t, x, a));
        traj.states.push(step.next_state);
        x = step.next_state;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{LqPolicy, MvPolicy};
    use crate::rng::RandomSource;
    use approx::assert_relative_eq;

    #[test]
    fn grid_construction() {
        let g = TimeGrid::from_horizon(0.0, 1.0, 1.0 / 252.0).unwrap();
        assert_eq!(g.n_steps, 252);
        assert_relative_eq!(g.terminal_time(), 1.0, epsilon = 1e-12);
        assert!(TimeGrid::from_horizon(0.0, 0.0, 0.1).is_err());
        assert!(TimeGrid::from_horizon(0.0, 1.0, 0.0).is_err());
        assert_eq!(TimeGrid::with_steps(0.0, 0.1, 0).unwrap().n_steps, 0);
    }

    #[test]
    fn gbm_zero_position_riskless() {
        let m = GbmMarket {
            mu: 0.3,
            sigma: 0.2,
            r_free: 0.0,
        };
        let mut rng = RandomSource::new(1).rng();
        let s = m.step(0, 0.0, 1.0, 0.0, 0.01, &mut rng).unwrap();
        assert_eq!(s.next_state, 1.0);
        assert_eq!(s.reward, 0.0);
    }

    #[test]
    fn gbm_zero_excess_zero_noise() {
        let m = GbmMarket {
            mu: 0.05,
            sigma: 1e-9,
            r_free: 0.05,
        };
        let s = m.step_with_z(1.0, 1.0, 0.01, 0.7).unwrap();
        assert!((s.next_state - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gbm_fixed_draw_matches_formula() {
        let m = GbmMarket {
            mu: 0.1,
            sigma: 0.2,
            r_free: 0.0,
        };
        let dt = 1.0 / 252.0;
        let s = m.step_with_z(1.0, 1.0, dt, 1.0).unwrap();
        let expected = 1.0 + (((0.1 - 0.02) * dt) + 0.2 * dt.sqrt()).exp() - 1.0;
        assert_relative_eq!(s.next_state, expected, epsilon = 1e-15);
        assert!((s.next_state - 1.0130).abs() < 1e-4);
    }

    #[test]
    fn gbm_rejects_non_finite() {
        let m = GbmMarket {
            mu: 0.1,
            sigma: 0.2,
            r_free: 0.0,
        };
        assert!(m.step_with_z(f64::NAN, 1.0, 0.01, 0.0).is_err());
        assert!(m.step_with_z(1.0, f64::INFINITY, 0.01, 0.0).is_err());
    }

    #[test]
    fn lq_env_examples() {
        let m = LqModel {
            a: -1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
            m: 2.0,
            r: 1.0,
            n: 2.0,
            p: 1.0,
            q: 2.0,
        };
        // origin is a fixed point with no cost
        let s = m.step_with_z(0.0, 0.0, 0.01, 0.3).unwrap();
        assert_eq!(s.next_state, 0.0);
        assert_eq!(s.reward, 0.0);

        // x = 1, a = 0, A = -1, C = 0, M = 2, P = 1, dt = 0.01
        let s = m.step_with_z(1.0, 0.0, 0.01, 0.0).unwrap();
        assert_relative_eq!(s.next_state, 0.99, epsilon = 1e-15);
        assert_relative_eq!(s.reward, -2.0, epsilon = 1e-15);

        // x = 0, a = -1, N = 2, Q = 2: rewards can be positive
        let s = m.step_with_z(0.0, -1.0, 0.01, 0.0).unwrap();
        assert_relative_eq!(s.reward, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn gbm_martingale_when_mu_equals_r() {
        let m = GbmMarket {
            mu: 0.05,
            sigma: 0.2,
            r_free: 0.05,
        };
        let mut rng = RandomSource::new(77).rng();
        let n = 100_000;
        let dt = 1.0 / 52.0;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let s = m.step(0, 0.0, 1.0, 1.0, dt, &mut rng).unwrap();
            sum += s.next_state;
            sumsq += s.next_state * s.next_state;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 4.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn rollout_degenerate_policy_keeps_state() {
        // point mass at zero: phi1 = 0 and tiny variance
        let policy = MvPolicy::new([0.0, -60.0, 0.0], 0.0, 1.0);
        let market = GbmMarket {
            mu: 0.3,
            sigma: 0.2,
            r_free: 0.0,
        };
        let grid = TimeGrid::from_horizon(0.0, 1.0, 0.1).unwrap();
        let mut rng = RandomSource::new(5).rng();
        let traj = rollout_episode(
            &market,
            &policy,
            RegularizerKind::Integrated,
            &grid,
            1.0,
            &mut rng,
        )
        .unwrap();
        for &s in &traj.states {
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rollout_deterministic_under_fixed_seed() {
        let policy = LqPolicy::new([0.3, 0.1, -1.0]);
        let env = LqModel {
            a: -1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
            m: 2.0,
            r: 1.0,
            n: 2.0,
            p: 1.0,
            q: 2.0,
        };
        let grid = TimeGrid::with_steps(0.0, 0.01, 3).unwrap();
        let source = RandomSource::with_stream(11, 4);
        let a = rollout_episode(
            &env,
            &policy,
            RegularizerKind::Integrated,
            &grid,
            0.5,
            &mut source.rng(),
        )
        .unwrap();
        let b = rollout_episode(
            &env,
            &policy,
            RegularizerKind::Integrated,
            &grid,
            0.5,
            &mut source.rng(),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rollout_matches_deterministic_euler_recursion() {
        // A = -1, deterministic policy a = 0, C = D = 0
        let env = LqModel {
            a: -1.0,
            b: 0.0,
            c: 0.0,
            d: 0.0,
            m: 0.0,
            r: 0.0,
            n: 0.0,
            p: 0.0,
            q: 0.0,
        };
        let policy = LqPolicy::new([0.0, 0.0, -80.0]);
        let dt = 0.05;
        let grid = TimeGrid::with_steps(0.0, dt, 20).unwrap();
        let mut rng = RandomSource::new(2).rng();
        let traj = rollout_episode(
            &env,
            &policy,
            RegularizerKind::Integrated,
            &grid,
            2.0,
            &mut rng,
        )
        .unwrap();
        for (k, &s) in traj.states.iter().enumerate() {
            let expected = 2.0 * (1.0 - dt).powi(k as i32);
            assert!((s - expected).abs() < 1e-9, "step {k}: {s} vs {expected}");
        }
    }

    #[test]
    fn lq_default_settings_episode_stays_finite() {
        let env = LqModel {
            a: -1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
            m: 2.0,
            r: 1.0,
            n: 2.0,
            p: 1.0,
            q: 2.0,
        };
        let policy = LqPolicy::new([0.2, -0.3, 0.0]);
        let grid = TimeGrid::with_steps(0.0, 0.01, 1000).unwrap();
        let mut rng = RandomSource::new(13).rng();
        let traj = rollout_episode(
            &env,
            &policy,
            RegularizerKind::Integrated,
            &grid,
            0.0,
            &mut rng,
        )
        .unwrap();
        let max_abs = traj.states.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
        assert!(max_abs.is_finite());
    }

    #[test]
    fn diverged_episode_reports_partial() {
        // explosive drift with huge dt forces overflow to infinity
        let env = LqModel {
            a: 1e160,
            b: 0.0,
            c: 0.0,
            d: 0.0,
            m: 0.0,
            r: 0.0,
            n: 0.0,
            p: 0.0,
            q: 0.0,
        };
        let policy = LqPolicy::new([0.0, 0.0, -80.0]);
        let grid = TimeGrid::with_steps(0.0, 1e200, 3).unwrap();
        let mut rng = RandomSource::new(2).rng();
        let err = rollout_episode(
            &env,
            &policy,
            RegularizerKind::Integrated,
            &grid,
            1.0,
            &mut rng,
        )
        .unwrap_err();
        match err {
            SimError::EpisodeDiverged { step, partial } => {
                assert_eq!(step, 0);
                let partial = partial.unwrap();
                assert_eq!(partial.states.len(), 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn replay_market_indexes_window() {
        let returns = vec![1.01, 0.99, 1.02, 1.0];
        let env = ReplayMarket {
            returns: &returns,
            start: 1,
        };
        let mut rng = RandomSource::new(0).rng();
        let s = env.step(0, 0.0, 1.0, 2.0, 0.1, &mut rng).unwrap();
        assert_relative_eq!(s.next_state, 1.0 + 2.0 * (0.99 - 1.0), epsilon = 1e-15);
        assert!(env.step(3, 0.0, 1.0, 1.0, 0.1, &mut rng).is_err());
    }
}
