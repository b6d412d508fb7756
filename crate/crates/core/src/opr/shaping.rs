use super::{GoodEpisodeBuffer, OprConfig, ShapingScope};
use crate::ppo::RolloutBatch;
use crate::scalar::Scalar;

/// `log pi_good(a|s) - log pi(a|s)`: positive when the remembered policy favoured the
/// action more than the current one.
pub fn directional_delta<F: Scalar>(good_log_prob: F, current_log_prob: F) -> F {
    good_log_prob - current_log_prob
}

/// `clip(2 tanh(delta / 2), -bound, bound)`.
pub fn bound_delta<F: Scalar>(delta: F, bound: F) -> F {
    let two = F::lit(2.0);
    (two * (delta / two).tanh()).max(-bound).min(bound)
}

/// `r (1 + alpha * bounded_delta)`.
pub fn shape_reward<F: Scalar>(raw_reward: F, bounded_delta: F, alpha: F) -> F {
    raw_reward * (F::one() + alpha * bounded_delta)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShapingStats {
    /// Transitions with a `(state_key, action)` match in the buffer.
    pub matched: usize,
    pub transitions: usize,
    /// Mean `|bounded delta|` over all transitions (unmatched count as zero).
    pub mean_abs_bounded_delta: f64,
    /// Whether shaped rewards were actually written.
    pub applied: bool,
}

/// Computes the bounded log-ratio for every transition with a buffer match, using the
/// acting policy's recorded log-probability as `log pi`. Rewards are rewritten only when
/// shaping is enabled with rollout scope; the statistics are produced either way.
///
/// `shaped_rewards` is reset from `raw_rewards` first, so this is idempotent.
pub fn shape_rollout<F: Scalar>(
    batch: &mut RolloutBatch<F>,
    buffer: &GoodEpisodeBuffer<F>,
    config: &OprConfig,
) -> ShapingStats {
    let apply = config.shaping_enabled && config.shaping_scope == ShapingScope::Rollout;
    let alpha = F::lit(config.alpha);
    let bound = F::lit(config.delta);
    let mut stats = ShapingStats {
        transitions: batch.len(),
        applied: apply,
        ..Default::default()
    };
    let mut abs_sum = 0.0;
    for t in 0..batch.len() {
        let raw = batch.raw_rewards[t];
        batch.shaped_rewards[t] = raw;
        let Some(good) = buffer.lookup_good_log_prob(batch.state_keys[t], batch.actions[t]) else {
            continue;
        };
        let bounded = bound_delta(directional_delta(good, batch.old_log_probs[t]), bound);
        stats.matched += 1;
        abs_sum += bounded.abs().to_f64_lossy();
        if apply {
            batch.shaped_rewards[t] = shape_reward(raw, bounded, alpha);
        }
    }
    if stats.transitions > 0 {
        stats.mean_abs_bounded_delta = abs_sum / stats.transitions as f64;
    }
    stats
}
