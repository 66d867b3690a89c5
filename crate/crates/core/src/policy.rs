//! Gaussian policy families and their likelihood machinery.
//!
//! Both shipped families map `(t, x)` to a normal distribution whose
//! variance is parameterized through an exponential, so it stays strictly
//! positive without clipping:
//!
//! - portfolio family:  mean `-phi1*(x - w)`, variance `exp(phi2 + phi3*(T-t))`
//! - linear-quadratic family: mean `phi1*x + phi2`, variance `exp(phi3)`
//!
//! The entropy regularizer comes in two variants: `Pointwise` evaluates
//! `-log pi(a)` at the sampled action, `Integrated` uses the closed-form
//! differential entropy of the Gaussian. Their expectations agree; the
//! integrated form has zero variance.

use crate::param::ParamVec;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const LN_2PI: f64 = 1.8378770664093453;
pub const LN_2PI_E: f64 = 2.8378770664093453;

/// Which form of the entropy regularizer a task uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularizerKind {
    /// `p = -log pi(a)` evaluated at the sampled action.
    Pointwise,
    /// The differential entropy of the current action distribution.
    Integrated,
}

/// A parametric stochastic policy with the derivative evaluations the
/// learning updates consume.
pub trait PolicyModel: Clone + Send + Sync {
    type Grad: ParamVec;

    /// Mean and variance of the action distribution at `(t, x)`.
    fn mean_var(&self, t: f64, x: f64) -> (f64, f64);

    /// Gradient of `log pi(a | t, x)` in the policy parameters.
    fn grad_log_pdf(&self, t: f64, x: f64, a: f64) -> Self::Grad;

    /// Gradient of the differential entropy in the policy parameters.
    fn entropy_grad(&self, t: f64, x: f64) -> Self::Grad;

    fn params(&self) -> Self::Grad;
    fn set_params(&mut self, p: Self::Grad);

    fn sample(&self, t: f64, x: f64, rng: &mut impl Rng) -> f64 {
        let (m, v) = self.mean_var(t, x);
        let z: f64 = rng.sample(StandardNormal);
        m + v.sqrt() * z
    }

    fn log_pdf(&self, t: f64, x: f64, a: f64) -> f64 {
        let (m, v) = self.mean_var(t, x);
        let d = a - m;
        -0.5 * (LN_2PI + v.ln()) - d * d / (2.0 * v)
    }

    /// Differential entropy `0.5*ln(2*pi*e*variance)`.
    fn entropy(&self, t: f64, x: f64) -> f64 {
        let (_, v) = self.mean_var(t, x);
        0.5 * (LN_2PI_E + v.ln())
    }

    /// Regularizer value `p(t, x, a, pi)`: the pointwise form is
    /// `-log pi(a)`, the integrated form its conditional expectation (the
    /// entropy). Tasks that subtract the entropy from their objective apply
    /// a negative temperature to this value; see the application modules.
    fn reg_value(&self, kind: RegularizerKind, t: f64, x: f64, a: f64) -> f64 {
        match kind {
            RegularizerKind::Pointwise => -self.log_pdf(t, x, a),
            RegularizerKind::Integrated => self.entropy(t, x),
        }
    }

    /// Parameter gradient of [`reg_value`](Self::reg_value) in the same
    /// orientation, used inside the generic updates together with a signed
    /// temperature.
    fn reg_grad(&self, kind: RegularizerKind, t: f64, x: f64, a: f64) -> Self::Grad {
        match kind {
            RegularizerKind::Pointwise => {
                let mut g = self.grad_log_pdf(t, x, a);
                g.scale(-1.0);
                g
            }
            RegularizerKind::Integrated => self.entropy_grad(t, x),
        }
    }

    /// Regularizer gradient in each family's documented training
    /// orientation. Identical to [`reg_grad`](Self::reg_grad) except for the
    /// portfolio family's integrated variant, whose training rules minimize
    /// an entropy-penalized objective and therefore carry the opposite sign.
    fn regularizer_grad_phi(&self, kind: RegularizerKind, t: f64, x: f64, a: f64) -> Self::Grad {
        self.reg_grad(kind, t, x, a)
    }
}

/// Shared Gaussian score computation given the parameter sensitivities of
/// the mean and of `log variance`.
fn gaussian_score<const N: usize>(
    m: f64,
    v: f64,
    dm_dphi: [f64; N],
    dlogv_dphi: [f64; N],
    a: f64,
) -> [f64; N] {
    let resid = (a - m) / v;
    let curv = -0.5 + (a - m) * (a - m) / (2.0 * v);
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = resid * dm_dphi[i] + curv * dlogv_dphi[i];
    }
    out
}

/// Policy for the portfolio task: `N(-phi1*(x-w), exp(phi2 + phi3*(T-t)))`.
///
/// `w` is the current multiplier target and `horizon` the terminal time of
/// the episode family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvPolicy {
    pub phi: [f64; 3],
    pub w: f64,
    pub horizon: f64,
}

impl MvPolicy {
    pub fn new(phi: [f64; 3], w: f64, horizon: f64) -> Self {
        Self { phi, w, horizon }
    }
}

impl PolicyModel for MvPolicy {
    type Grad = [f64; 3];

    fn mean_var(&self, t: f64, x: f64) -> (f64, f64) {
        let tau = self.horizon - t;
        (
            -self.phi[0] * (x - self.w),
            (self.phi[1] + self.phi[2] * tau).exp(),
        )
    }

    fn grad_log_pdf(&self, t: f64, x: f64, a: f64) -> [f64; 3] {
        let tau = self.horizon - t;
        let (m, v) = self.mean_var(t, x);
        gaussian_score(m, v, [-(x - self.w), 0.0, 0.0], [0.0, 1.0, tau], a)
    }

    fn entropy_grad(&self, t: f64, _x: f64) -> [f64; 3] {
        let tau = self.horizon - t;
        [0.0, 0.5, 0.5 * tau]
    }

    fn params(&self) -> [f64; 3] {
        self.phi
    }

    fn set_params(&mut self, p: [f64; 3]) {
        self.phi = p;
    }

    /// The portfolio training rules minimize an objective in which the
    /// entropy enters with a minus sign; the integrated gradient is stated
    /// (and returned) in that orientation.
    fn regularizer_grad_phi(&self, kind: RegularizerKind, t: f64, x: f64, a: f64) -> [f64; 3] {
        match kind {
            RegularizerKind::Integrated => {
                let mut g = self.entropy_grad(t, x);
                g.scale(-1.0);
                g
            }
            RegularizerKind::Pointwise => self.reg_grad(kind, t, x, a),
        }
    }
}

/// Policy for the linear-quadratic task: `N(phi1*x + phi2, exp(phi3))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqPolicy {
    pub phi: [f64; 3],
}

impl LqPolicy {
    pub fn new(phi: [f64; 3]) -> Self {
        Self { phi }
    }
}

impl PolicyModel for LqPolicy {
    type Grad = [f64; 3];

    fn mean_var(&self, _t: f64, x: f64) -> (f64, f64) {
        (self.phi[0] * x + self.phi[1], self.phi[2].exp())
    }

    fn grad_log_pdf(&self, t: f64, x: f64, a: f64) -> [f64; 3] {
        let (m, v) = self.mean_var(t, x);
        gaussian_score(m, v, [x, 1.0, 0.0], [0.0, 0.0, 1.0], a)
    }

    fn entropy_grad(&self, _t: f64, _x: f64) -> [f64; 3] {
        [0.0, 0.0, 0.5]
    }

    fn params(&self) -> [f64; 3] {
        self.phi
    }

    fn set_params(&mut self, p: [f64; 3]) {
        self.phi = p;
    }
}

/// Wraps a policy with a symmetric action clip; sampling clamps to
/// `[-bound, bound]` while every likelihood evaluation is taken at the
/// recorded (clamped) action. Off by default in all configurations.
#[derive(Clone, Copy, Debug)]
pub struct ClippedPolicy<P> {
    pub inner: P,
    pub bound: f64,
}

impl<P: PolicyModel> PolicyModel for ClippedPolicy<P> {
    type Grad = P::Grad;

    fn mean_var(&self, t: f64, x: f64) -> (f64, f64) {
        self.inner.mean_var(t, x)
    }

    fn grad_log_pdf(&self, t: f64, x: f64, a: f64) -> Self::Grad {
        self.inner.grad_log_pdf(t, x, a)
    }

    fn entropy_grad(&self, t: f64, x: f64) -> Self::Grad {
        self.inner.entropy_grad(t, x)
    }

    fn params(&self) -> Self::Grad {
        self.inner.params()
    }

    fn set_params(&mut self, p: Self::Grad) {
        self.inner.set_params(p);
    }

    fn sample(&self, t: f64, x: f64, rng: &mut impl Rng) -> f64 {
        self.inner.sample(t, x, rng).clamp(-self.bound, self.bound)
    }

    fn regularizer_grad_phi(&self, kind: RegularizerKind, t: f64, x: f64, a: f64) -> Self::Grad {
        self.inner.regularizer_grad_phi(kind, t, x, a)
    }
}
