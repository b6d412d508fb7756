use rand::Rng;

use super::{bound_delta, directional_delta, shape_reward, GoodEpisodeBuffer, OprConfig, ShapingScope};
use crate::agent::AgentParams;
use crate::error::{Error, Result};
use crate::ppo::{gae, PpoConfig, ReplaySample, ReplaySource};
use crate::scalar::Scalar;
use crate::seeding;

/// Behavioral cloning loss `-mean log pi(a|s)` over `(state, action)` samples and its
/// gradient. Returns `None` for an empty sample (no contribution).
pub fn bc_loss<F: Scalar, S: AsRef<[F]>>(
    agent: &AgentParams<F>,
    states: &[S],
    actions: &[usize],
) -> Result<Option<(F, AgentParams<F>)>> {
    if states.is_empty() {
        return Ok(None);
    }
    let (ev, traces) = agent.evaluate_traced(states, actions)?;
    let m = F::from_usize_lossy(states.len());
    let loss = -ev.log_probs.iter().copied().sum::<F>() / m;
    if !loss.is_finite() {
        return Err(Error::numerical("bc_loss", "non-finite loss"));
    }
    let mut grads = agent.zeros_like();
    let d = -F::one() / m;
    for (tr, &a) in traces.iter().zip(actions) {
        agent.backward_acc(tr, a, d, F::zero(), F::zero(), &mut grads)?;
    }
    Ok(Some((loss, grads)))
}

/// Advantages for every stored transition (flat, oldest first) under the current critic,
/// used when replayed samples also enter the clipped surrogate.
///
/// Each episode is treated as its own stream: terminated episodes end with value 0,
/// truncated ones bootstrap with the value of their last state. With replay-scoped
/// shaping the rewards are shaped against the current policy first.
pub fn replay_advantages<F: Scalar>(
    buffer: &GoodEpisodeBuffer<F>,
    agent: &AgentParams<F>,
    ppo: &PpoConfig,
    opr: &OprConfig,
) -> Result<Vec<F>> {
    let shape = opr.shaping_enabled && opr.shaping_scope == ShapingScope::Replay;
    let (alpha, bound) = (F::lit(opr.alpha), F::lit(opr.delta));
    let mut out = Vec::with_capacity(buffer.len());
    for ep in buffer.episodes() {
        let ts = ep.transitions();
        let mut values = Vec::with_capacity(ts.len());
        let mut rewards = Vec::with_capacity(ts.len());
        for t in ts {
            let tr = agent.trace(&t.state)?;
            values.push(tr.value());
            let mut r = t.reward;
            if shape {
                if let Some(good) = buffer.lookup_good_log_prob(t.state_key, t.action) {
                    let current = tr.log_probs()[t.action];
                    r = shape_reward(r, bound_delta(directional_delta(good, current), bound), alpha);
                }
            }
            rewards.push(r);
        }
        let n = ts.len();
        let mut dones = vec![false; n];
        let mut truncated = vec![false; n];
        let mut trunc_values = vec![F::zero(); n];
        if n > 0 {
            dones[n - 1] = true;
            if !ep.terminated() {
                truncated[n - 1] = true;
                trunc_values[n - 1] = values[n - 1];
            }
        }
        out.extend(gae(
            &rewards,
            &values,
            &dones,
            &truncated,
            &trunc_values,
            F::zero(),
            F::lit(ppo.gamma),
            F::lit(ppo.gae_lambda),
        ));
    }
    Ok(out)
}

/// Uniform sampler over a buffer's transitions, fed into `ppo_update`.
pub struct BufferReplay<'a, F> {
    buffer: &'a GoodEpisodeBuffer<F>,
    rng: seeding::Rng,
    advantages: Option<Vec<F>>,
}

impl<'a, F: Scalar> BufferReplay<'a, F> {
    pub fn new(buffer: &'a GoodEpisodeBuffer<F>, rng: seeding::Rng) -> Self {
        BufferReplay {
            buffer,
            rng,
            advantages: None,
        }
    }

    pub fn with_advantages(mut self, advantages: Vec<F>) -> Result<Self> {
        if advantages.len() != self.buffer.len() {
            return Err(Error::shape("replay advantages", self.buffer.len(), advantages.len()));
        }
        self.advantages = Some(advantages);
        Ok(self)
    }
}

impl<F: Scalar> ReplaySource<F> for BufferReplay<'_, F> {
    fn len(&self) -> usize {
        self.buffer.len()
    }

    fn sample(&mut self, n: usize) -> Vec<ReplaySample<F>> {
        if self.buffer.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| {
                let i = self.rng.gen_range(0..self.buffer.len());
                let t = self.buffer.transition(i).expect("index in range");
                ReplaySample {
                    state: t.state.clone(),
                    action: t.action,
                    behavior_log_prob: t.behavior_log_prob,
                    advantage: self.advantages.as_ref().map(|a| a[i]),
                }
            })
            .collect()
    }
}
