//! Learning-rate and KD-weight schedules.

use crate::config::{Paradigm, TrainingConfig};
use crate::error::{Error, Result};

/// Step schedule: `lr_initial / decay_factor^k` where `k` counts milestones
/// at or before `iteration`.
pub fn lr_schedule(iteration: usize, config: &TrainingConfig) -> f64 {
    let passed = config
        .lr_milestones
        .iter()
        .filter(|&&m| m <= iteration)
        .count();
    config.lr_initial / config.lr_decay_factor.powi(passed as i32)
}

/// Effective KD weight at an iteration.
///
/// NO_KD is zero everywhere; LG holds `lambda_base`; HG holds `lambda_base`
/// until `lambda_switch_iteration` and `lambda_high` from there onward.
pub fn lambda_schedule(iteration: usize, config: &TrainingConfig) -> Result<f64> {
    match config.paradigm {
        Paradigm::NoKd => Ok(0.0),
        Paradigm::Lg => Ok(config.lambda_base),
        Paradigm::Hg => {
            let switch = config.lambda_switch_iteration.ok_or(Error::Validation {
                field: "lambda_switch_iteration",
                msg: "required for paradigm HG".to_string(),
            })?;
            Ok(if iteration >= switch {
                config.lambda_high
            } else {
                config.lambda_base
            })
        }
    }
}
