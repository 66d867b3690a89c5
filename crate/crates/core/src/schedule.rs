//! Learning-rate decay schedules.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("schedule argument {arg} outside domain ({domain})")]
    OutOfDomain { arg: f64, domain: &'static str },
}

/// Multiplicative decay applied on top of the base learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Schedule {
    /// `l(j) = j^(-exponent)` over episode/iteration counts `j >= 1`.
    Episodic { exponent: f64 },
    /// `l(t) = 1 / max(1, ln t)` over simulation time `t > 0`.
    Ergodic,
}

impl Schedule {
    pub fn eval(&self, arg: f64) -> Result<f64, ScheduleError> {
        match self {
            Schedule::Episodic { exponent } => {
                if !(arg >= 1.0) {
                    return Err(ScheduleError::OutOfDomain {
                        arg,
                        domain: "episodic requires j >= 1",
                    });
                }
                Ok(arg.powf(-exponent))
            }
            Schedule::Ergodic => {
                if !(arg > 0.0) {
                    return Err(ScheduleError::OutOfDomain {
                        arg,
                        domain: "ergodic requires t > 0",
                    });
                }
                Ok(1.0 / arg.ln().max(1.0))
            }
        }
    }
}

/// Free-function form of [`Schedule::eval`].
pub fn schedule_eval(schedule: Schedule, arg: f64) -> Result<f64, ScheduleError> {
    schedule.eval(arg)
}
