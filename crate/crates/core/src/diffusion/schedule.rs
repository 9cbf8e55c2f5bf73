use serde::{Deserialize, Serialize};

use crate::config::ScheduleKind;
use crate::error::{Error, Result};

/// `alpha_bar[s]` and `beta[s]` for `s = 0..=S`, with `alpha_bar[0] = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub alpha_bar: Vec<f64>,
    pub beta: Vec<f64>,
}

pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<Schedule> {
    if steps < 2 {
        return Err(Error::Config(format!(
            "a schedule needs at least 2 steps, got {steps}"
        )));
    }
    let s_f = steps as f64;
    let mut alpha_bar = vec![1.0; steps + 1];
    let mut beta = vec![0.0; steps + 1];
    match kind {
        ScheduleKind::Sqrt => {
            for s in 1..=steps {
                alpha_bar[s] = (1.0 - (s as f64 / s_f + 1e-4).sqrt()).clamp(1e-4, 1.0 - 1e-4);
                beta[s] = 1.0 - alpha_bar[s] / alpha_bar[s - 1];
            }
        }
        ScheduleKind::Linear => {
            let scale = 1000.0 / s_f;
            let (lo, hi) = (1e-4 * scale, (0.02 * scale).min(0.999));
            for s in 1..=steps {
                beta[s] = lo + (hi - lo) * (s - 1) as f64 / (s_f - 1.0);
                alpha_bar[s] = alpha_bar[s - 1] * (1.0 - beta[s]);
            }
        }
    }
    Ok(Schedule {
        kind,
        steps,
        alpha_bar,
        beta,
    })
}

impl Schedule {
    pub fn alpha_bar(&self, s: usize) -> f64 {
        self.alpha_bar[s]
    }
}
