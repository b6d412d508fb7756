//! On-policy PPO machinery: rollout storage, GAE, the clipped surrogate, value loss and
//! the minibatch update loop.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentOptimizer, AgentParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub minibatch_size: usize,
    pub epochs_per_update: usize,
    /// Per-minibatch advantage standardisation (std floored at 1e-8).
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.1,
            entropy_coef: 0.01,
            value_coef: 0.25,
            max_grad_norm: 0.5,
            minibatch_size: 64,
            epochs_per_update: 4,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon must be positive");
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0) {
            return bad("loss coefficients must be non-negative");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm must be positive");
        }
        if self.minibatch_size == 0 || self.epochs_per_update == 0 {
            return bad("minibatch_size and epochs_per_update must be positive");
        }
        Ok(())
    }
}

/// Fixed-horizon on-policy data from one environment stream.
///
/// `shaped_rewards` starts as a copy of `raw_rewards`; reward shaping overwrites it.
/// GAE always reads `shaped_rewards`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch<F> {
    pub states: Vec<Vec<F>>,
    pub state_keys: Vec<u64>,
    pub actions: Vec<usize>,
    pub raw_rewards: Vec<F>,
    pub shaped_rewards: Vec<F>,
    pub old_log_probs: Vec<F>,
    pub values: Vec<F>,
    /// Episode ended after this step (terminated or truncated).
    pub dones: Vec<bool>,
    /// Of the `dones`, the ones that were horizon truncations.
    pub truncated: Vec<bool>,
    /// `V(s_{t+1})` for truncated steps, used as the bootstrap; zero elsewhere.
    pub truncation_values: Vec<F>,
    /// `V` of the state following the last step (ignored if the last step is done).
    pub bootstrap_value: F,
    advantages: Option<Vec<F>>,
    return_targets: Option<Vec<F>>,
}

/// One recorded environment step, as appended to a [`RolloutBatch`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<F> {
    pub state: Vec<F>,
    pub state_key: u64,
    pub action: usize,
    pub reward: F,
    pub log_prob: F,
    pub value: F,
    pub terminated: bool,
    pub truncated: bool,
    pub truncation_value: F,
}

impl<F: Scalar> RolloutBatch<F> {
    pub fn new() -> Self {
        RolloutBatch {
            states: Vec::new(),
            state_keys: Vec::new(),
            actions: Vec::new(),
            raw_rewards: Vec::new(),
            shaped_rewards: Vec::new(),
            old_log_probs: Vec::new(),
            values: Vec::new(),
            dones: Vec::new(),
            truncated: Vec::new(),
            truncation_values: Vec::new(),
            bootstrap_value: F::zero(),
            advantages: None,
            return_targets: None,
        }
    }

    pub fn push(&mut self, step: StepRecord<F>) {
        self.states.push(step.state);
        self.state_keys.push(step.state_key);
        self.actions.push(step.action);
        self.raw_rewards.push(step.reward);
        self.shaped_rewards.push(step.reward);
        self.old_log_probs.push(step.log_prob);
        self.values.push(step.value);
        let done = step.terminated || step.truncated;
        self.dones.push(done);
        let trunc = step.truncated && !step.terminated;
        self.truncated.push(trunc);
        self.truncation_values
            .push(if trunc { step.truncation_value } else { F::zero() });
        self.advantages = None;
        self.return_targets = None;
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        if t == 0 {
            return Err(Error::Domain("empty rollout batch".into()));
        }
        let lens = [
            self.states.len(),
            self.state_keys.len(),
            self.raw_rewards.len(),
            self.shaped_rewards.len(),
            self.old_log_probs.len(),
            self.values.len(),
            self.dones.len(),
            self.truncated.len(),
            self.truncation_values.len(),
        ];
        if let Some(&bad) = lens.iter().find(|&&l| l != t) {
            return Err(Error::shape("RolloutBatch arrays", t, bad));
        }
        Ok(())
    }

    pub fn advantages(&self) -> Result<&[F]> {
        self.advantages
            .as_deref()
            .ok_or_else(|| Error::Usage("advantages read before compute_gae".into()))
    }

    pub fn return_targets(&self) -> Result<&[F]> {
        self.return_targets
            .as_deref()
            .ok_or_else(|| Error::Usage("return targets read before compute_gae".into()))
    }

    pub fn has_advantages(&self) -> bool {
        self.advantages.is_some()
    }

    /// Concatenates batches whose advantages are already computed, in the given order.
    pub fn concat(parts: &[RolloutBatch<F>]) -> Result<Self> {
        let mut out = RolloutBatch::new();
        let mut adv = Vec::new();
        let mut ret = Vec::new();
        for p in parts {
            if p.is_empty() {
                continue;
            }
            adv.extend_from_slice(p.advantages()?);
            ret.extend_from_slice(p.return_targets()?);
            out.states.extend(p.states.iter().cloned());
            out.state_keys.extend_from_slice(&p.state_keys);
            out.actions.extend_from_slice(&p.actions);
            out.raw_rewards.extend_from_slice(&p.raw_rewards);
            out.shaped_rewards.extend_from_slice(&p.shaped_rewards);
            out.old_log_probs.extend_from_slice(&p.old_log_probs);
            out.values.extend_from_slice(&p.values);
            out.dones.extend_from_slice(&p.dones);
            out.truncated.extend_from_slice(&p.truncated);
            out.truncation_values.extend_from_slice(&p.truncation_values);
        }
        out.advantages = Some(adv);
        out.return_targets = Some(ret);
        Ok(out)
    }
}

/// Backward GAE recursion over one stream.
///
/// `delta_t = r_t + gamma * V_next * (1 - terminal_t) - V(s_t)` where `V_next` is
/// `values[t+1]`, the bootstrap for the final step, or the recorded truncation value when
/// the episode was cut at the horizon; `A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}`.
pub fn gae<F: Scalar>(
    rewards: &[F],
    values: &[F],
    dones: &[bool],
    truncated: &[bool],
    truncation_values: &[F],
    bootstrap_value: F,
    gamma: F,
    lambda: F,
) -> Vec<F> {
    let t_len = rewards.len();
    let mut adv = vec![F::zero(); t_len];
    let mut next_adv = F::zero();
    for t in (0..t_len).rev() {
        let next_value = if dones[t] {
            if truncated[t] {
                truncation_values[t]
            } else {
                F::zero()
            }
        } else if t + 1 < t_len {
            values[t + 1]
        } else {
            bootstrap_value
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        let carry = if dones[t] { F::zero() } else { gamma * lambda * next_adv };
        adv[t] = delta + carry;
        next_adv = adv[t];
    }
    adv
}

/// Fills advantages and `return_targets = advantages + values` from the shaped rewards.
pub fn compute_gae<F: Scalar>(batch: &mut RolloutBatch<F>, config: &PpoConfig) -> Result<()> {
    batch.validate()?;
    let adv = gae(
        &batch.shaped_rewards,
        &batch.values,
        &batch.dones,
        &batch.truncated,
        &batch.truncation_values,
        batch.bootstrap_value,
        F::lit(config.gamma),
        F::lit(config.gae_lambda),
    );
    if adv.iter().any(|a| !a.is_finite()) {
        return Err(Error::numerical("compute_gae", "non-finite advantage"));
    }
    let ret = adv.iter().zip(&batch.values).map(|(&a, &v)| a + v).collect();
    batch.advantages = Some(adv);
    batch.return_targets = Some(ret);
    Ok(())
}

/// `-mean_t min(r_t A_t, clip(r_t, 1-eps, 1+eps) A_t)` and its gradient with respect to
/// each `log_probs[t]`.
pub fn clipped_surrogate_loss<F: Scalar>(
    log_probs: &[F],
    old_log_probs: &[F],
    advantages: &[F],
    clip_epsilon: F,
) -> Result<(F, Vec<F>)> {
    let n = log_probs.len();
    if old_log_probs.len() != n {
        return Err(Error::shape("clipped_surrogate old_log_probs", n, old_log_probs.len()));
    }
    if advantages.len() != n {
        return Err(Error::shape("clipped_surrogate advantages", n, advantages.len()));
    }
    if n == 0 {
        return Err(Error::Domain("clipped surrogate over an empty batch".into()));
    }
    let all = log_probs.iter().chain(old_log_probs).chain(advantages);
    if all.clone().any(|x| x.is_nan()) {
        return Err(Error::numerical("clipped_surrogate", "NaN input"));
    }
    let inv_n = F::one() / F::from_usize_lossy(n);
    let (lo, hi) = (F::one() - clip_epsilon, F::one() + clip_epsilon);
    let mut total = F::zero();
    let mut grad = Vec::with_capacity(n);
    for ((&lp, &old), &a) in log_probs.iter().zip(old_log_probs).zip(advantages) {
        let ratio = (lp - old).exp();
        let unclipped = ratio * a;
        let clipped = ratio.max(lo).min(hi) * a;
        if unclipped <= clipped {
            total += unclipped;
            // d(r A)/d log_prob = r A
            grad.push(-unclipped * inv_n);
        } else {
            total += clipped;
            grad.push(F::zero());
        }
    }
    Ok((-total * inv_n, grad))
}

/// `0.5 * mean((V - target)^2)` and its gradient with respect to each value.
pub fn value_loss<F: Scalar>(values: &[F], return_targets: &[F]) -> Result<(F, Vec<F>)> {
    let n = values.len();
    if return_targets.len() != n {
        return Err(Error::shape("value_loss targets", n, return_targets.len()));
    }
    if n == 0 {
        return Err(Error::Domain("value loss over an empty batch".into()));
    }
    let inv_n = F::one() / F::from_usize_lossy(n);
    let half = F::lit(0.5);
    let mut loss = F::zero();
    let grad = values
        .iter()
        .zip(return_targets)
        .map(|(&v, &t)| {
            let d = v - t;
            loss += half * d * d;
            d * inv_n
        })
        .collect();
    Ok((loss * inv_n, grad))
}

/// Actor loss: the (already negated) surrogate minus the entropy bonus.
pub fn actor_loss<F: Scalar>(surrogate_loss: F, entropy_mean: F, entropy_coef: F) -> F {
    surrogate_loss - entropy_coef * entropy_mean
}

/// A stored transition replayed into an update.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySample<F> {
    pub state: Vec<F>,
    pub action: usize,
    pub behavior_log_prob: F,
    /// Set only when replayed samples also enter the clipped surrogate.
    pub advantage: Option<F>,
}

/// Supplies replay samples drawn from some external memory.
pub trait ReplaySource<F> {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample(&mut self, n: usize) -> Vec<ReplaySample<F>>;
}

/// How replayed samples augment the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub lambda_bc: f64,
    /// Number of leading PPO epochs whose minibatches get replay samples.
    pub bc_epochs: usize,
    /// Replay samples per minibatch, capped by the source size.
    pub samples_per_minibatch: usize,
    /// Also feed replay samples (with their recorded probabilities as the old policy)
    /// into the clipped surrogate.
    pub in_surrogate: bool,
}

pub struct Augmentation<'a, F> {
    pub source: &'a mut dyn ReplaySource<F>,
    pub config: AugmentConfig,
}

/// Per-minibatch loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown<F> {
    pub surrogate: F,
    pub value: F,
    pub entropy_mean: F,
    /// `-c_ent * entropy_mean`
    pub entropy_term: F,
    pub bc: F,
    /// Actor loss plus `lambda_bc * bc`.
    pub actor_total: F,
    /// What is actually minimised: `actor_total + value_coef * value`.
    pub optimized: F,
    pub clip_fraction: F,
}

/// Rollout portion of a minibatch; advantages are used as given (normalise beforehand).
pub struct Minibatch<'a, F> {
    pub states: Vec<&'a [F]>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<F>,
    pub advantages: Vec<F>,
    pub return_targets: Vec<F>,
}

/// Loss and gradient of the full objective on one minibatch. Pure in `params`.
pub fn minibatch_loss_and_grad<F: Scalar>(
    params: &AgentParams<F>,
    mb: &Minibatch<'_, F>,
    replay: &[ReplaySample<F>],
    lambda_bc: F,
    replay_in_surrogate: bool,
    config: &PpoConfig,
) -> Result<(LossBreakdown<F>, AgentParams<F>)> {
    let n = mb.actions.len();
    if n == 0 {
        return Err(Error::Domain("empty minibatch".into()));
    }
    let (ev, traces) = params.evaluate_traced(&mb.states, &mb.actions)?;
    let c_ent = F::lit(config.entropy_coef);
    let c_v = F::lit(config.value_coef);
    let eps = F::lit(config.clip_epsilon);

    // Replay samples: BC always, surrogate optionally.
    let replay_states: Vec<&[F]> = replay.iter().map(|s| s.state.as_slice()).collect();
    let replay_actions: Vec<usize> = replay.iter().map(|s| s.action).collect();
    let (rev, rtraces) = if replay.is_empty() {
        (Default::default(), Vec::new())
    } else {
        params.evaluate_traced(&replay_states, &replay_actions)?
    };
    let surr_replay: Vec<usize> = if replay_in_surrogate {
        (0..replay.len()).filter(|&i| replay[i].advantage.is_some()).collect()
    } else {
        Vec::new()
    };

    let mut lp = ev.log_probs.clone();
    let mut old = mb.old_log_probs.clone();
    let mut adv = mb.advantages.clone();
    for &i in &surr_replay {
        lp.push(rev.log_probs[i]);
        old.push(replay[i].behavior_log_prob);
        adv.push(replay[i].advantage.expect("filtered"));
    }
    let (surrogate, d_surr) = clipped_surrogate_loss(&lp, &old, &adv, eps)?;
    let clipped = lp
        .iter()
        .zip(&old)
        .filter(|(&a, &b)| ((a - b).exp() - F::one()).abs() > eps)
        .count();
    let clip_fraction = F::from_usize_lossy(clipped) / F::from_usize_lossy(lp.len());

    let inv_n = F::one() / F::from_usize_lossy(n);
    let entropy_mean = ev.entropies.iter().copied().sum::<F>() * inv_n;
    let (vloss, d_v) = value_loss(&ev.values, &mb.return_targets)?;

    let bc = if replay.is_empty() {
        F::zero()
    } else {
        -rev.log_probs.iter().copied().sum::<F>() / F::from_usize_lossy(replay.len())
    };

    let actor = actor_loss(surrogate, entropy_mean, c_ent);
    let actor_total = crate::opr::total_loss(actor, bc, lambda_bc);
    let optimized = actor_total + c_v * vloss;
    for (name, v) in [
        ("surrogate", surrogate),
        ("value", vloss),
        ("entropy", entropy_mean),
        ("bc", bc),
    ] {
        if !v.is_finite() {
            return Err(Error::numerical("ppo_update", format!("non-finite {name} loss")));
        }
    }

    let mut grads = params.zeros_like();
    for (i, tr) in traces.iter().enumerate() {
        params.backward_acc(tr, mb.actions[i], d_surr[i], -c_ent * inv_n, c_v * d_v[i], &mut grads)?;
    }
    if !replay.is_empty() {
        let d_bc = -lambda_bc / F::from_usize_lossy(replay.len());
        let mut surr_pos = vec![None; replay.len()];
        for (k, &i) in surr_replay.iter().enumerate() {
            surr_pos[i] = Some(d_surr[n + k]);
        }
        for (i, tr) in rtraces.iter().enumerate() {
            let d_lp = d_bc + surr_pos[i].unwrap_or(F::zero());
            params.backward_acc(tr, replay_actions[i], d_lp, F::zero(), F::zero(), &mut grads)?;
        }
    }

    Ok((
        LossBreakdown {
            surrogate,
            value: vloss,
            entropy_mean,
            entropy_term: -c_ent * entropy_mean,
            bc,
            actor_total,
            optimized,
            clip_fraction,
        },
        grads,
    ))
}

fn normalize<F: Scalar>(xs: &mut [F]) {
    if xs.len() < 2 {
        return;
    }
    let n = F::from_usize_lossy(xs.len());
    let mean = xs.iter().copied().sum::<F>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / n;
    let std = var.sqrt().max(F::lit(1e-8));
    for x in xs {
        *x = (*x - mean) / std;
    }
}

/// Averages of the per-minibatch statistics of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub surrogate_loss: f64,
    pub value_loss: f64,
    pub entropy_term: f64,
    pub bc_loss: f64,
    pub total_loss: f64,
    pub mean_entropy: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub minibatches: usize,
    pub bc_minibatches: usize,
}

/// Runs `epochs_per_update` epochs of shuffled minibatch updates over `batch`.
///
/// Each minibatch gradient is clipped to `max_grad_norm` (global L2) before the Adam step.
pub fn ppo_update<F: Scalar, R: Rng + ?Sized>(
    params: &mut AgentParams<F>,
    optimizer: &mut AgentOptimizer<F>,
    batch: &RolloutBatch<F>,
    mut aux: Option<Augmentation<'_, F>>,
    config: &PpoConfig,
    learning_rate: F,
    rng: &mut R,
) -> Result<UpdateStats> {
    batch.validate()?;
    let advantages = batch.advantages()?;
    let targets = batch.return_targets()?;
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats::default();
    let max_norm = F::lit(config.max_grad_norm);

    for epoch in 0..config.epochs_per_update {
        idx.shuffle(rng);
        for chunk in idx.chunks(config.minibatch_size) {
            let mut mb = Minibatch {
                states: chunk.iter().map(|&i| batch.states[i].as_slice()).collect(),
                actions: chunk.iter().map(|&i| batch.actions[i]).collect(),
                old_log_probs: chunk.iter().map(|&i| batch.old_log_probs[i]).collect(),
                advantages: chunk.iter().map(|&i| advantages[i]).collect(),
                return_targets: chunk.iter().map(|&i| targets[i]).collect(),
            };
            let (mut replay, lambda_bc, in_surrogate) = match aux.as_mut() {
                Some(a) if epoch < a.config.bc_epochs && !a.source.is_empty() => {
                    let k = a.config.samples_per_minibatch.min(a.source.len());
                    (a.source.sample(k), F::lit(a.config.lambda_bc), a.config.in_surrogate)
                }
                _ => (Vec::new(), F::zero(), false),
            };
            if config.normalize_advantages {
                if in_surrogate {
                    normalize_with_replay(&mut mb.advantages, &mut replay);
                } else {
                    normalize(&mut mb.advantages);
                }
            }

            let (loss, mut grads) =
                minibatch_loss_and_grad(params, &mb, &replay, lambda_bc, in_surrogate, config)?;
            let norm = grads.sq_norm().sqrt();
            if !norm.is_finite() {
                return Err(Error::numerical("ppo_update", "non-finite gradient norm"));
            }
            if norm > max_norm {
                grads.scale(max_norm / norm);
            }
            optimizer.step(params, &grads, learning_rate)?;
            stats.accumulate(&loss, norm, !replay.is_empty());
        }
    }
    stats.finish();
    Ok(stats)
}

/// Standardises rollout and surrogate-bound replay advantages as one population.
fn normalize_with_replay<F: Scalar>(advantages: &mut [F], replay: &mut [ReplaySample<F>]) {
    let mut all = advantages.to_vec();
    all.extend(replay.iter().filter_map(|s| s.advantage));
    normalize(&mut all);
    let (head, tail) = all.split_at(advantages.len());
    advantages.copy_from_slice(head);
    let mut it = tail.iter();
    for s in replay.iter_mut().filter(|s| s.advantage.is_some()) {
        s.advantage = it.next().copied();
    }
}

impl UpdateStats {
    fn accumulate<F: Scalar>(&mut self, l: &LossBreakdown<F>, grad_norm: F, with_bc: bool) {
        self.surrogate_loss += l.surrogate.to_f64_lossy();
        self.value_loss += l.value.to_f64_lossy();
        self.entropy_term += l.entropy_term.to_f64_lossy();
        self.total_loss += l.optimized.to_f64_lossy();
        self.mean_entropy += l.entropy_mean.to_f64_lossy();
        self.clip_fraction += l.clip_fraction.to_f64_lossy();
        self.grad_norm += grad_norm.to_f64_lossy();
        self.minibatches += 1;
        if with_bc {
            self.bc_loss += l.bc.to_f64_lossy();
            self.bc_minibatches += 1;
        }
    }

    fn finish(&mut self) {
        if self.minibatches > 0 {
            let k = self.minibatches as f64;
            self.surrogate_loss /= k;
            self.value_loss /= k;
            self.entropy_term /= k;
            self.total_loss /= k;
            self.mean_entropy /= k;
            self.clip_fraction /= k;
            self.grad_norm /= k;
        }
        if self.bc_minibatches > 0 {
            self.bc_loss /= self.bc_minibatches as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use crate::numkit::Matrix;
    use crate::opr::{BufferReplay, GoodEpisodeBuffer};
    use crate::seeding::{rng_for, Stream};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn gae_zero_rewards_zero_values() {
        let a = gae(&[0.0; 5], &[0.0; 5], &[false; 5], &[false; 5], &[0.0; 5], 0.0, 0.99, 0.95);
        assert!(a.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gae_two_step_hand_example() {
        // The worked example's arithmetic (delta_1 = -0.005, A_0 = 0.99030) bootstraps with V = 0.5.
        let a = gae(&[1.0, 0.0], &[0.5, 0.5], &[false; 2], &[false; 2], &[0.0; 2], 0.5, 0.99, 0.95);
        assert!(close(a[1], -0.005, 1e-12));
        assert!(close(a[0], 0.995 + 0.99 * 0.95 * -0.005, 1e-12));
        assert_eq!(format!("{:.5}", a[0]), "0.99030");
        // With a zero bootstrap the final delta is -0.5 instead.
        let a = gae(&[1.0, 0.0], &[0.5, 0.5], &[false; 2], &[false; 2], &[0.0; 2], 0.0, 0.99, 0.95);
        assert!(close(a[1], -0.5, 1e-12));
        assert!(close(a[0], 0.995 + 0.99 * 0.95 * -0.5, 1e-12));
    }

    #[test]
    fn gae_lambda_one_is_discounted_sum() {
        let r = [0.3, -1.0, 0.0, 2.0, 0.5];
        let boot = 1.7;
        let g = 0.9f64;
        let a = gae(&r, &[0.0; 5], &[false; 5], &[false; 5], &[0.0; 5], boot, g, 1.0);
        for t in 0..5 {
            let mut s = 0.0;
            for (k, rk) in r.iter().enumerate().skip(t) {
                s += g.powi((k - t) as i32) * rk;
            }
            s += g.powi((5 - t) as i32) * boot;
            assert!(close(a[t], s, 1e-12), "t={t}");
        }
    }

    #[test]
    fn gae_terminal_and_truncation_boundaries() {
        // step 1 terminates, step 3 truncates with recorded V(s_4) = 2.
        let r = [1.0, 1.0, 1.0, 1.0];
        let v = [0.1, 0.2, 0.3, 0.4];
        let dones = [false, true, false, true];
        let tr = [false, false, false, true];
        let tv = [0.0, 0.0, 0.0, 2.0];
        let a = gae(&r, &v, &dones, &tr, &tv, 99.0, 0.5, 1.0);
        assert!(close(a[3], 1.0 + 0.5 * 2.0 - 0.4, 1e-12));
        assert!(close(a[2], 1.0 + 0.5 * 0.4 - 0.3 + 0.5 * a[3], 1e-12));
        assert!(close(a[1], 1.0 - 0.2, 1e-12));
        assert!(close(a[0], 1.0 + 0.5 * 0.2 - 0.1 + 0.5 * a[1], 1e-12));
    }

    #[test]
    fn surrogate_on_policy_is_negative_mean_advantage() {
        let lp = [-0.5, -1.0, -2.0];
        let adv = [1.0, -2.0, 0.5];
        let (l, _) = clipped_surrogate_loss(&lp, &lp, &adv, 0.1).unwrap();
        assert!(close(l, 0.5 / 3.0, 1e-15));
    }

    #[test]
    fn surrogate_clipped_and_active_branches() {
        let old = 0.0;
        let lp = 1.5f64.ln();
        let (l, g) = clipped_surrogate_loss(&[lp], &[old], &[1.0], 0.1).unwrap();
        assert!(close(l, -1.1, 1e-12));
        assert_eq!(g[0], 0.0);
        let (l, g) = clipped_surrogate_loss(&[lp], &[old], &[-1.0], 0.1).unwrap();
        assert!(close(l, 1.5, 1e-12));
        assert!(close(g[0], 1.5, 1e-12));
    }

    #[test]
    fn surrogate_rejects_nan_and_mismatch() {
        assert!(matches!(
            clipped_surrogate_loss(&[f64::NAN], &[0.0], &[1.0], 0.1),
            Err(Error::Numerical { .. })
        ));
        assert!(matches!(
            clipped_surrogate_loss(&[0.0, 0.0], &[0.0], &[1.0], 0.1),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn value_loss_examples() {
        assert_eq!(value_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap().0, 0.0);
        assert_eq!(value_loss(&[0.0], &[2.0]).unwrap().0, 2.0);
        assert_eq!(value_loss(&[1.0, 3.0], &[0.0, 0.0]).unwrap().0, 2.5);
    }

    #[test]
    fn actor_loss_examples() {
        assert_eq!(actor_loss(0.7, 1.2, 0.0), 0.7);
        assert!(close(actor_loss(0.0, 4f64.ln(), 0.01), -0.013863, 1e-6));
    }

    fn tiny_agent() -> AgentParams<f64> {
        let cfg = AgentConfig {
            hidden_sizes: vec![],
            ..AgentConfig::default()
        };
        let mut p = AgentParams::new(1, 2, &cfg, &mut rng_for(0, Stream::Init, &[])).unwrap();
        p.policy_net.weights_mut()[0] = Matrix::from_rows(&[vec![0.2], vec![-0.1]]).unwrap();
        p.policy_net.biases_mut()[0] = vec![0.0, 0.0];
        p.value_net.weights_mut()[0] = Matrix::from_rows(&[vec![0.5]]).unwrap();
        p.value_net.biases_mut()[0] = vec![0.0];
        p
    }

    fn one_sample_batch(p: &AgentParams<f64>) -> RolloutBatch<f64> {
        let lp = p.evaluate(&[vec![1.0]], &[0]).unwrap().log_probs[0];
        let mut b = RolloutBatch::new();
        b.push(StepRecord {
            state: vec![1.0],
            state_key: 0,
            action: 0,
            reward: 0.0,
            log_prob: lp,
            value: 0.5,
            terminated: true,
            truncated: false,
            truncation_value: 0.0,
        });
        b.advantages = Some(vec![1.0]);
        b.return_targets = Some(vec![2.0]);
        b
    }

    fn single_step_config() -> PpoConfig {
        PpoConfig {
            minibatch_size: 1,
            epochs_per_update: 1,
            normalize_advantages: false,
            max_grad_norm: 1e9,
            ..PpoConfig::default()
        }
    }

    #[test]
    fn single_update_matches_hand_stepped_adam() {
        let mut p = tiny_agent();
        let batch = one_sample_batch(&p);
        let cfg = single_step_config();
        let mut opt = AgentOptimizer::new(&p, 0.9, 0.999, 1e-8);
        let lr = 0.1;
        ppo_update(&mut p, &mut opt, &batch, None, &cfg, lr, &mut rng_for(0, Stream::Shuffle, &[]))
            .unwrap();

        // Hand gradient: logits z = [0.2, -0.1], x = 1, A = 1, ratio 1 (unclipped).
        let z = [0.2f64, -0.1];
        let m = z[0].max(z[1]);
        let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
        let p0 = (z[0] - lse).exp();
        let probs = [p0, 1.0 - p0];
        let h = -(probs[0] * probs[0].ln() + probs[1] * probs[1].ln());
        let dz: Vec<f64> = (0..2)
            .map(|j| {
                let ind = if j == 0 { 1.0 } else { 0.0 };
                -(ind - probs[j]) + 0.01 * probs[j] * (probs[j].ln() + h)
            })
            .collect();
        let dv = 0.25 * (0.5 - 2.0);
        let adam1 = |g: f64| {
            let m_hat = 0.1 * g / (1.0 - 0.9);
            let v_hat = 0.001 * g * g / (1.0 - 0.999);
            lr * m_hat / (v_hat.sqrt() + 1e-8)
        };
        let w = p.policy_net.weights()[0].as_slice();
        let b = &p.policy_net.biases()[0];
        assert!(close(w[0], 0.2 - adam1(dz[0]), 1e-12));
        assert!(close(w[1], -0.1 - adam1(dz[1]), 1e-12));
        assert!(close(b[0], -adam1(dz[0]), 1e-12));
        assert!(close(b[1], -adam1(dz[1]), 1e-12));
        assert!(close(p.value_net.weights()[0].as_slice()[0], 0.5 - adam1(dv), 1e-12));
        assert!(close(p.value_net.biases()[0][0], -adam1(dv), 1e-12));
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut p = tiny_agent();
        let before = p.clone();
        let batch = one_sample_batch(&p);
        let mut opt = AgentOptimizer::new(&p, 0.9, 0.999, 1e-8);
        let stats = ppo_update(
            &mut p,
            &mut opt,
            &batch,
            None,
            &single_step_config(),
            0.0,
            &mut rng_for(0, Stream::Shuffle, &[]),
        )
        .unwrap();
        assert_eq!(p, before);
        assert_eq!(stats.minibatches, 1);
        assert!(stats.value_loss > 0.0);
    }

    #[test]
    fn empty_replay_source_is_bit_identical_to_plain_ppo() {
        let cfg = AgentConfig {
            hidden_sizes: vec![8],
            ..AgentConfig::default()
        };
        let base = AgentParams::new(3, 3, &cfg, &mut rng_for(4, Stream::Init, &[])).unwrap();
        let mut batch = RolloutBatch::new();
        let mut rng = rng_for(4, Stream::Act, &[]);
        for t in 0..16 {
            let s = vec![t as f64 / 16.0, 1.0, -0.5];
            let d = base.act(&s, &mut rng).unwrap();
            batch.push(StepRecord {
                state: s,
                state_key: t,
                action: d.action,
                reward: (t % 3) as f64,
                log_prob: d.log_prob,
                value: d.value,
                terminated: t % 5 == 4,
                truncated: false,
                truncation_value: 0.0,
            });
        }
        let ppo = PpoConfig {
            minibatch_size: 4,
            ..PpoConfig::default()
        };
        compute_gae(&mut batch, &ppo).unwrap();

        let run = |with_aux: bool| {
            let mut p = base.clone();
            let mut opt = AgentOptimizer::new(&p, 0.9, 0.999, 1e-8);
            let buffer = GoodEpisodeBuffer::new(100, 75.0, 100);
            let mut replay = BufferReplay::new(&buffer, rng_for(4, Stream::BcSample, &[]));
            let aux = with_aux.then(|| Augmentation {
                source: &mut replay as &mut dyn ReplaySource<f64>,
                config: AugmentConfig {
                    lambda_bc: 0.0,
                    bc_epochs: 3,
                    samples_per_minibatch: 4,
                    in_surrogate: false,
                },
            });
            let stats =
                ppo_update(&mut p, &mut opt, &batch, aux, &ppo, 1e-3, &mut rng_for(4, Stream::Shuffle, &[]))
                    .unwrap();
            (p.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), stats)
        };
        assert_eq!(run(false), run(true));
    }

    #[test]
    fn advantages_required_before_update() {
        let p = tiny_agent();
        let mut b = one_sample_batch(&p);
        b.advantages = None;
        assert!(matches!(b.advantages(), Err(Error::Usage(_))));
    }
}
