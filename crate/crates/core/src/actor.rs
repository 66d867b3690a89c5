//! Policy-gradient estimation and policy-parameter increments.
//!
//! The offline estimator averages, over complete episodes, the sum
//!
//! `sum_k e^{-beta t_k} { [score_k + zeta_k] * (dJ_k + (r_k + gamma p_k
//! - beta J_k - B_k) dt) + gamma q_k dt }`
//!
//! where `score = d log pi / d phi`, `q` is the regularizer gradient, and
//! `B` an optional action-independent baseline. The online increment is the
//! single-step analogue scaled by the scalar test function `eta`. `gamma`
//! is signed, carrying each task's regularizer orientation.

use crate::critic::{eta_eval, td_error, CriticError, TestFn, TestSlot, TraceAcc};
use crate::param::ParamVec;
use crate::policy::{PolicyModel, RegularizerKind};
use crate::sim::{StepObs, Trajectory};
use crate::value::ValueModel;
use serde::{Deserialize, Serialize};

/// Optional action-independent baseline subtracted inside the bracket.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Zero,
    /// Use the current value approximation `J(t_k, x_k)`.
    ValueFn,
}

/// Per-episode policy increment split into its two parts: `g1` collects the
/// score-times-bracket terms, `g2` everything contributed by the
/// regularizer gradient (zero when the regularizer is absent).
#[derive(Clone, Copy, Debug)]
pub struct PgParts<G> {
    pub total: G,
    pub g1: G,
    pub g2: G,
}

/// Monte-Carlo policy-gradient estimate with componentwise standard errors.
#[derive(Clone, Copy, Debug)]
pub struct PgEstimate<G> {
    pub g: G,
    pub g1: G,
    pub g2: G,
    /// Standard error of each component of `g` across episodes.
    pub se: G,
    pub n_episodes: usize,
}

/// The single-episode policy increment of the offline update (no
/// averaging); ascent callers apply `phi += l * alpha * total`, descent
/// tasks subtract. `kind` must match the variant the trajectory was
/// generated with.
pub fn delta_phi_offline<V, P>(
    value: &V,
    policy: &P,
    kind: RegularizerKind,
    traj: &Trajectory,
    gamma: f64,
    beta: f64,
    zeta_spec: TestFn,
    baseline: Baseline,
) -> Result<PgParts<P::Grad>, CriticError>
where
    V: ValueModel,
    P: PolicyModel,
{
    zeta_spec.validate_for(TestSlot::Zeta)?;
    let mut zeta_acc = TraceAcc::default();
    let mut prev_score: Option<P::Grad> = None;
    let mut g1 = P::Grad::zeros();
    let mut g2 = P::Grad::zeros();
    for k in 0..traj.n_steps() {
        let s = traj.step_obs(k);
        let disc = (-beta * s.t).exp();
        let j_now = value.eval(s.t, s.x);
        let b = match baseline {
            Baseline::Zero => 0.0,
            Baseline::ValueFn => j_now,
        };
        let bracket = value.eval(s.t + s.dt, s.x_next) - j_now
            + (s.r + gamma * s.p - beta * j_now - b) * s.dt;
        let score = policy.grad_log_pdf(s.t, s.x, s.a);
        let zeta = zeta_acc.zeta(zeta_spec, prev_score.as_ref(), s.dt);
        let direction = P::Grad::lin_comb(&score, 1.0, &zeta);
        g1.axpy(disc * bracket, &direction);
        prev_score = Some(score);
        g2.axpy(disc * gamma * s.dt, &policy.reg_grad(kind, s.t, s.x, s.a));
    }
    Ok(PgParts {
        total: P::Grad::lin_comb(&g1, 1.0, &g2),
        g1,
        g2,
    })
}

/// Monte-Carlo average of [`delta_phi_offline`] over a batch of episodes.
pub fn pg_offline_estimate<V, P>(
    value: &V,
    policy: &P,
    kind: RegularizerKind,
    batch: &[Trajectory],
    gamma: f64,
    beta: f64,
    zeta_spec: TestFn,
    baseline: Baseline,
) -> Result<PgEstimate<P::Grad>, CriticError>
where
    V: ValueModel,
    P: PolicyModel,
{
    if batch.is_empty() {
        return Err(CriticError::InvalidInput("empty batch"));
    }
    let n = batch.len();
    let dim = P::Grad::DIM;
    let mut sum = P::Grad::zeros();
    let mut sumsq = P::Grad::zeros();
    let mut g1 = P::Grad::zeros();
    let mut g2 = P::Grad::zeros();
    for traj in batch {
        let parts = delta_phi_offline(value, policy, kind, traj, gamma, beta, zeta_spec, baseline)?;
        for i in 0..dim {
            let v = parts.total.as_slice()[i];
            sum.as_mut_slice()[i] += v;
            sumsq.as_mut_slice()[i] += v * v;
        }
        g1.add(&parts.g1);
        g2.add(&parts.g2);
    }
    let inv_n = 1.0 / n as f64;
    let mut g = sum;
    g.scale(inv_n);
    g1.scale(inv_n);
    g2.scale(inv_n);
    let mut se = P::Grad::zeros();
    if n > 1 {
        for i in 0..dim {
            let mean = g.as_slice()[i];
            let var = (sumsq.as_slice()[i] * inv_n - mean * mean).max(0.0);
            se.as_mut_slice()[i] = (var / (n as f64 - 1.0)).sqrt();
        }
    }
    Ok(PgEstimate {
        g,
        g1,
        g2,
        se,
        n_episodes: n,
    })
}

/// One-step online policy increment:
/// `eta * { [score + zeta] * delta + gamma * q dt }`.
pub fn delta_phi_online<V, P>(
    value: &V,
    policy: &P,
    kind: RegularizerKind,
    s: &StepObs,
    gamma: f64,
    beta: f64,
    eta_spec: TestFn,
    zeta: &P::Grad,
) -> P::Grad
where
    V: ValueModel,
    P: PolicyModel,
{
    let delta = td_error(value, policy, kind, s, gamma, beta);
    let eta = eta_eval(eta_spec, beta, s.t);
    let score = policy.grad_log_pdf(s.t, s.x, s.a);
    let mut out = P::Grad::lin_comb(&score, 1.0, zeta);
    out.scale(delta);
    out.axpy(gamma * s.dt, &policy.reg_grad(kind, s.t, s.x, s.a));
    out.scale(eta);
    out
}
