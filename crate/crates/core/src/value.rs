//! Parametric value-function families.

use crate::param::ParamVec;
use serde::{Deserialize, Serialize};

/// A parametric value approximator `J^theta`.
pub trait ValueModel: Clone + Send + Sync {
    type Grad: ParamVec;

    fn eval(&self, t: f64, x: f64) -> f64;

    /// Gradient in the value parameters at `(t, x)`.
    fn grad_theta(&self, t: f64, x: f64) -> Self::Grad;

    fn params(&self) -> Self::Grad;
    fn set_params(&mut self, p: Self::Grad);

    fn with_params(&self, p: Self::Grad) -> Self {
        let mut out = self.clone();
        out.set_params(p);
        out
    }
}

/// Value family for the portfolio task:
///
/// `J(t,x) = (x-w)^2 exp(-theta3*(T-t)) + theta2*(t^2-T^2) + theta1*(t-T) - (w-z)^2`
///
/// The terminal condition `J(T,x) = (x-w)^2 - (w-z)^2` holds for every
/// parameter value by construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvValue {
    pub theta: [f64; 3],
    pub w: f64,
    pub z: f64,
    pub horizon: f64,
}

impl MvValue {
    pub fn new(theta: [f64; 3], w: f64, z: f64, horizon: f64) -> Self {
        Self {
            theta,
            w,
            z,
            horizon,
        }
    }

    /// Terminal payoff `(x-w)^2 - (w-z)^2`, independent of theta.
    pub fn terminal(&self, x: f64) -> f64 {
        let y = x - self.w;
        let wz = self.w - self.z;
        y * y - wz * wz
    }
}

impl ValueModel for MvValue {
    type Grad = [f64; 3];

    fn eval(&self, t: f64, x: f64) -> f64 {
        let big_t = self.horizon;
        let y = x - self.w;
        let wz = self.w - self.z;
        y * y * (-self.theta[2] * (big_t - t)).exp()
            + self.theta[1] * (t * t - big_t * big_t)
            + self.theta[0] * (t - big_t)
            - wz * wz
    }

    fn grad_theta(&self, t: f64, x: f64) -> [f64; 3] {
        let big_t = self.horizon;
        let y = x - self.w;
        [
            t - big_t,
            t * t - big_t * big_t,
            y * y * (-self.theta[2] * (big_t - t)).exp() * (t - big_t),
        ]
    }

    fn params(&self) -> [f64; 3] {
        self.theta
    }

    fn set_params(&mut self, p: [f64; 3]) {
        self.theta = p;
    }
}

/// Quadratic relative-value family for the ergodic task:
/// `J(x) = 0.5*theta0*x^2 + theta1*x` (no constant term; the relative value
/// is only determined up to one).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqValue {
    pub theta: [f64; 2],
}

impl LqValue {
    pub fn new(theta: [f64; 2]) -> Self {
        Self { theta }
    }
}

impl ValueModel for LqValue {
    type Grad = [f64; 2];

    fn eval(&self, _t: f64, x: f64) -> f64 {
        0.5 * self.theta[0] * x * x + self.theta[1] * x
    }

    fn grad_theta(&self, _t: f64, x: f64) -> [f64; 2] {
        [0.5 * x * x, x]
    }

    fn params(&self) -> [f64; 2] {
        self.theta
    }

    fn set_params(&mut self, p: [f64; 2]) {
        self.theta = p;
    }
}
