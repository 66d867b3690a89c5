//! Incremental actor-critic learner for long-run-average tasks.
//!
//! One learner owns the triple `(theta, V, phi)` and advances it along a
//! single trajectory. Each step samples an action, advances the
//! environment, forms the average-reward TD increment
//!
//! `delta = J(x') - J(x) + r dt + gamma p dt - V dt`
//!
//! and applies
//!
//! `theta += l(t) alpha_theta xi delta`,  `V += l(t) alpha_V delta`,
//! `phi += l(t) alpha_phi eta { [score + zeta] delta + gamma q dt }`.

use crate::critic::{eta_eval, CriticError, TestFn, TestSlot, TraceAcc};
use crate::param::ParamVec;
use crate::policy::{PolicyModel, RegularizerKind};
use crate::schedule::Schedule;
use crate::sim::{Environment, SimError};
use crate::value::ValueModel;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ErgodicConfig {
    pub gamma: f64,
    pub dt: f64,
    pub alpha_theta: f64,
    pub alpha_v: f64,
    pub alpha_phi: f64,
    pub xi: TestFn,
    pub eta: TestFn,
    pub zeta: TestFn,
    pub kind: RegularizerKind,
    pub schedule: Schedule,
}

impl ErgodicConfig {
    pub fn validate(&self) -> Result<(), CriticError> {
        if !(self.dt > 0.0) {
            return Err(CriticError::InvalidInput("dt must be positive"));
        }
        self.xi.validate_for(TestSlot::Xi)?;
        self.eta.validate_for(TestSlot::Eta)?;
        self.zeta.validate_for(TestSlot::Zeta)?;
        Ok(())
    }
}

/// Learner state for one run.
#[derive(Clone, Debug)]
pub struct ErgodicLearner<V: ValueModel, P: PolicyModel> {
    pub value: V,
    /// Scalar running estimate of the long-run average (regularized) reward.
    pub v_avg: f64,
    pub policy: P,
    pub x: f64,
    pub k: u64,
    cfg: ErgodicConfig,
    cum_raw: f64,
    cum_regularized: f64,
    xi_acc: TraceAcc<V::Grad>,
    zeta_acc: TraceAcc<P::Grad>,
    last_score: Option<P::Grad>,
}

/// Quantities produced by one learner step, mostly for diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct ErgodicStepInfo<PG> {
    pub delta: f64,
    pub delta_phi: PG,
    pub reward: f64,
}

impl<V: ValueModel, P: PolicyModel> ErgodicLearner<V, P> {
    pub fn new(value: V, policy: P, x0: f64, cfg: ErgodicConfig) -> Result<Self, CriticError> {
        cfg.validate()?;
        Ok(Self {
            value,
            v_avg: 0.0,
            policy,
            x: x0,
            k: 0,
            cfg,
            cum_raw: 0.0,
            cum_regularized: 0.0,
            xi_acc: TraceAcc::default(),
            zeta_acc: TraceAcc::default(),
            last_score: None,
        })
    }

    pub fn config(&self) -> &ErgodicConfig {
        &self.cfg
    }

    /// Simulation clock `k * dt`.
    pub fn time(&self) -> f64 {
        self.k as f64 * self.cfg.dt
    }

    /// Time average of raw rewards since the start (defined for `k >= 1`).
    pub fn running_avg_raw(&self) -> f64 {
        self.cum_raw / self.time()
    }

    /// Time average including the temperature-weighted regularizer.
    pub fn running_avg_regularized(&self) -> f64 {
        self.cum_regularized / self.time()
    }

    /// Integral of raw rewards so far (`sum r dt`).
    pub fn cumulative_raw(&self) -> f64 {
        self.cum_raw
    }

    /// Advance one step. A non-finite next state aborts the run.
    pub fn step<E: Environment, R: Rng>(
        &mut self,
        env: &E,
        rng: &mut R,
    ) -> Result<ErgodicStepInfo<P::Grad>, SimError> {
        let cfg = self.cfg;
        let dt = cfg.dt;
        let t = self.time();
        let x = self.x;

        let a = self.policy.sample(t, x, rng);
        let out = env.step(self.k as usize, t, x, a, dt, rng)?;
        if !out.next_state.is_finite() || !a.is_finite() {
            return Err(SimError::EpisodeDiverged {
                step: self.k as usize,
                partial: None,
            });
        }

        let p = self.policy.reg_value(cfg.kind, t, x, a);
        let delta = self.value.eval(t + dt, out.next_state) - self.value.eval(t, x)
            + out.reward * dt
            + cfg.gamma * p * dt
            - self.v_avg * dt;

        let xi = self.xi_acc.xi(cfg.xi, self.value.grad_theta(t, x), dt);
        let eta = eta_eval(cfg.eta, 0.0, t);
        let score = self.policy.grad_log_pdf(t, x, a);
        let zeta = self.zeta_acc.zeta(cfg.zeta, self.last_score.as_ref(), dt);
        let mut delta_phi = P::Grad::lin_comb(&score, 1.0, &zeta);
        delta_phi.scale(delta);
        delta_phi.axpy(cfg.gamma * dt, &self.policy.reg_grad(cfg.kind, t, x, a));
        delta_phi.scale(eta);

        // l(k dt); the k = 0 value is the t -> 0 limit of the schedule.
        let l = if self.k == 0 {
            1.0
        } else {
            cfg.schedule.eval(t).expect("positive time")
        };

        let mut theta = self.value.params();
        theta.axpy(l * cfg.alpha_theta, &xi_scaled(&xi, delta));
        self.value.set_params(theta);
        self.v_avg += l * cfg.alpha_v * delta;
        let mut phi = self.policy.params();
        phi.axpy(l * cfg.alpha_phi, &delta_phi);
        self.policy.set_params(phi);

        self.cum_raw += out.reward * dt;
        self.cum_regularized += (out.reward + cfg.gamma * p) * dt;
        self.last_score = Some(score);
        self.x = out.next_state;
        self.k += 1;

        Ok(ErgodicStepInfo {
            delta,
            delta_phi,
            reward: out.reward,
        })
    }
}

fn xi_scaled<G: ParamVec>(xi: &G, delta: f64) -> G {
    let mut out = *xi;
    out.scale(delta);
    out
}

/// Policy increment of the eta-free gradient-ascent variant:
/// `[score + zeta] delta + gamma q dt`. Identical to the learner's update
/// whenever its eta evaluates to one.
pub fn ergodic_pg_update_direct<P: PolicyModel>(
    policy: &P,
    kind: RegularizerKind,
    t: f64,
    x: f64,
    a: f64,
    delta: f64,
    zeta: &P::Grad,
    gamma: f64,
    dt: f64,
) -> P::Grad {
    let score = policy.grad_log_pdf(t, x, a);
    let mut out = P::Grad::lin_comb(&score, 1.0, zeta);
    out.scale(delta);
    out.axpy(gamma * dt, &policy.reg_grad(kind, t, x, a));
    out
}
