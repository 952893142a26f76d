//! Learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Schedule {
    Constant,
    /// Multiply by `factor` once for every milestone `≤ step`.
    Multistep { milestones: Vec<usize>, factor: f64 },
    /// Cosine annealing from the initial rate to `lr_min` over `t_max` steps,
    /// then held at `lr_min`.
    Cosine { t_max: usize, lr_min: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            Schedule::Constant => Ok(()),
            Schedule::Multistep { milestones, factor } => {
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Config("milestones must be strictly increasing".into()));
                }
                if !(*factor > 0.0) {
                    return Err(Error::Config("multistep factor must be positive".into()));
                }
                Ok(())
            }
            Schedule::Cosine { t_max, lr_min } => {
                if *t_max == 0 || *lr_min < 0.0 {
                    return Err(Error::Config("cosine needs t_max > 0 and lr_min ≥ 0".into()));
                }
                Ok(())
            }
        }
    }

    /// Rate at `step` for initial rate `init`.
    pub fn at(&self, init: f64, step: usize) -> f64 {
        match self {
            Schedule::Constant => init,
            Schedule::Multistep { milestones, factor } => {
                let passed = milestones.iter().filter(|&&m| step >= m).count();
                init * factor.powi(passed as i32)
            }
            Schedule::Cosine { t_max, lr_min } => {
                if step >= *t_max {
                    return *lr_min;
                }
                let c = (std::f64::consts::PI * step as f64 / *t_max as f64).cos();
                lr_min + (init - lr_min) * (1.0 + c) / 2.0
            }
        }
    }
}
