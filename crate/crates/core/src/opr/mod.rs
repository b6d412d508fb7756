//! Optimistic Policy Regularization.
//!
//! Three cooperating pieces:
//!
//! - [`GoodEpisodeBuffer`]: keeps whole episodes whose raw return strictly beats the
//!   `P`-th percentile of the last `K` returns, bounded to `N_max` transitions with
//!   episode-level FIFO eviction.
//! - Directional log-ratio shaping: `r' = r (1 + alpha * clip(2 tanh(d / 2), -delta, delta))`
//!   with `d = log pi_good(a|s) - log pi(a|s)`.
//! - Behavioral cloning: negative log-likelihood of buffered actions under the current
//!   policy, added to the actor loss with weight `lambda_bc`.

mod bc;
mod buffer;
mod shaping;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use bc::{bc_loss, replay_advantages, BufferReplay};
pub use buffer::{
    percentile, Admission, AdmissionDecision, BufferSnapshot, Episode, GoodEpisodeBuffer,
    ReturnWindow, Transition,
};
pub use shaping::{bound_delta, directional_delta, shape_reward, shape_rollout, ShapingStats};

/// Which transitions receive the directional shaping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapingScope {
    /// Every rollout transition with a buffer match; unmatched ones are left unshaped.
    Rollout,
    /// Only replayed buffer transitions (requires `buffer_in_surrogate`).
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OprConfig {
    /// Shaping scale `alpha`.
    pub alpha: f64,
    /// Shaping bound `delta`.
    pub delta: f64,
    pub lambda_bc: f64,
    pub bc_epochs: usize,
    /// BC is applied on updates whose index is a multiple of this.
    pub update_interval: usize,
    pub shaping_enabled: bool,
    pub bc_enabled: bool,
    /// Buffer capacity `N_max` in transitions.
    pub buffer_capacity: usize,
    /// Admission percentile `P` in `[0, 100]`.
    pub percentile: f64,
    /// Return window length `K`.
    pub window: usize,
    pub buffer_in_surrogate: bool,
    pub shaping_scope: ShapingScope,
}

impl Default for OprConfig {
    fn default() -> Self {
        OprConfig {
            alpha: 0.5,
            delta: 0.01,
            lambda_bc: 1.0,
            bc_epochs: 3,
            update_interval: 50,
            shaping_enabled: true,
            bc_enabled: true,
            buffer_capacity: 100,
            percentile: 75.0,
            window: 100,
            buffer_in_surrogate: false,
            shaping_scope: ShapingScope::Rollout,
        }
    }
}

impl OprConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.alpha >= 0.0) {
            return bad("alpha must be non-negative");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if !(self.lambda_bc >= 0.0) {
            return bad("lambda_bc must be non-negative");
        }
        if !(0.0..=100.0).contains(&self.percentile) {
            return bad("percentile must lie in [0, 100]");
        }
        if self.window == 0 || self.buffer_capacity == 0 || self.update_interval == 0 {
            return bad("window, buffer_capacity and update_interval must be positive");
        }
        if self.shaping_scope == ShapingScope::Replay && !self.buffer_in_surrogate {
            return bad("shaping_scope = replay requires buffer_in_surrogate = true");
        }
        Ok(())
    }
}

/// Actor objective with behavioral cloning: `actor + lambda_bc * bc`.
pub fn total_loss<F: Scalar>(actor_loss: F, bc_loss: F, lambda_bc: F) -> F {
    actor_loss + lambda_bc * bc_loss
}
