//! Actor-critic reinforcement learning for continuous-time stochastic
//! differential equation environments.
//!
//! The crate provides:
//!
//! - [`sim`]: time grids, seeded episode rollout, and the two concrete
//!   environments (a geometric-Brownian-motion market and a scalar
//!   linear-quadratic diffusion);
//! - [`policy`] / [`value`]: Gaussian policy families and parametric value
//!   approximators with all the derivative evaluations the learners consume;
//! - [`critic`]: temporal-difference errors, martingale-loss and
//!   orthogonality-condition policy evaluation, and the test-function library;
//! - [`actor`]: offline and online policy-gradient updates;
//! - [`ergodic`]: the incremental actor-critic learner for long-run-average
//!   tasks;
//! - [`meanvar`] / [`lq`]: the two worked applications together with their
//!   closed-form benchmark solvers and a brute-force oracle;
//! - [`harness`]: experiment configuration, seeded repetition fan-out, and
//!   CSV/manifest output.
//!
//! Batch work (episode batches, repetitions, evaluation paths) runs on a
//! rayon pool when the default `parallel` feature is enabled and falls back
//! to sequential iteration without it; results are merged by index either
//! way, so output does not depend on the worker count.

// `!(x > 0.0)` deliberately rejects NaN along with the out-of-range values;
// the indexed loops walk several same-length arrays at once; the update
// functions take exactly the inputs of the rules they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]

pub mod actor;
pub mod critic;
pub mod ergodic;
pub mod exec;
pub mod harness;
pub mod lq;
pub mod meanvar;
pub mod param;
pub mod policy;
pub mod rng;
pub mod schedule;
pub mod sim;
pub mod value;

pub use param::ParamVec;
pub use policy::{LqPolicy, MvPolicy, PolicyModel, RegularizerKind};
pub use rng::RandomSource;
pub use schedule::Schedule;
pub use sim::{EnvStep, Environment, GbmMarket, LqModel, SimError, TimeGrid, Trajectory};
pub use value::{LqValue, MvValue, ValueModel};
