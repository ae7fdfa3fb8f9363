//! Per-step task selection during the main phase.

use super::ConfigError;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Speech,
    Augmenting,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::Speech => write!(f, "speech"),
            Task::Augmenting => write!(f, "augmenting"),
        }
    }
}

/// Draws the batch kind: augmenting with probability `rho`.
pub fn draw_task<R: Rng>(rng: &mut R, rho: f64) -> Result<Task, ConfigError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(ConfigError::RhoOutOfRange(rho));
    }
    Ok(if rng.gen::<f64>() < rho {
        Task::Augmenting
    } else {
        Task::Speech
    })
}
