//! Categorical actor-critic.
//!
//! Policy and value are separate MLPs by default. With a shared trunk, a hidden-only MLP
//! feeds two single-layer heads; the trunk output goes through the hidden activation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{
    adam_step, entropy_from_log_probs, log_softmax_into, Activation, AdamState, MlpCache,
    MlpParams,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub shared_trunk: bool,
    /// Multiplier on the initial policy output layer; small values give a near-uniform policy.
    pub policy_output_scale: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden_sizes: vec![64, 64],
            activation: Activation::Tanh,
            shared_trunk: false,
            policy_output_scale: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams<F> {
    pub policy_net: MlpParams<F>,
    pub value_net: MlpParams<F>,
    /// Present iff the trunk is shared between the two heads.
    pub trunk: Option<MlpParams<F>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDecision<F> {
    pub action: usize,
    pub log_prob: F,
    pub value: F,
    pub entropy: F,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation<F> {
    pub log_probs: Vec<F>,
    pub entropies: Vec<F>,
    pub values: Vec<F>,
}

/// Forward trace for one state, consumed by [`AgentParams::backward_acc`].
#[derive(Debug, Clone)]
pub struct AgentTrace<F> {
    trunk: Option<(MlpCache<F>, Vec<F>)>,
    policy: MlpCache<F>,
    value: MlpCache<F>,
    log_probs: Vec<F>,
    entropy: F,
}

impl<F: Scalar> AgentTrace<F> {
    pub fn log_probs(&self) -> &[F] {
        &self.log_probs
    }

    pub fn entropy(&self) -> F {
        self.entropy
    }

    pub fn value(&self) -> F {
        self.value.output()[0]
    }
}

impl<F: Scalar> AgentParams<F> {
    pub fn new<R: Rng + ?Sized>(
        observation_dim: usize,
        action_count: usize,
        config: &AgentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if action_count < 2 {
            return Err(Error::Domain("a categorical policy needs at least 2 actions".into()));
        }
        let out_scale = F::lit(config.policy_output_scale);
        let act = config.activation;
        if config.shared_trunk {
            if config.hidden_sizes.is_empty() {
                return Err(Error::Config("a shared trunk needs at least one hidden layer".into()));
            }
            let mut sizes = vec![observation_dim];
            sizes.extend(&config.hidden_sizes);
            let feat = *sizes.last().expect("non-empty");
            let trunk = MlpParams::init(&sizes, act, F::one(), rng)?;
            let policy_net = MlpParams::init(&[feat, action_count], act, out_scale, rng)?;
            let value_net = MlpParams::init(&[feat, 1], act, F::one(), rng)?;
            Ok(AgentParams {
                policy_net,
                value_net,
                trunk: Some(trunk),
            })
        } else {
            let mut sizes = vec![observation_dim];
            sizes.extend(&config.hidden_sizes);
            let mut p_sizes = sizes.clone();
            p_sizes.push(action_count);
            let mut v_sizes = sizes;
            v_sizes.push(1);
            let policy_net = MlpParams::init(&p_sizes, act, out_scale, rng)?;
            let value_net = MlpParams::init(&v_sizes, act, F::one(), rng)?;
            Ok(AgentParams {
                policy_net,
                value_net,
                trunk: None,
            })
        }
    }

    /// Assembles parameters from existing networks, checking head and trunk compatibility.
    pub fn from_nets(
        policy_net: MlpParams<F>,
        value_net: MlpParams<F>,
        trunk: Option<MlpParams<F>>,
    ) -> Result<Self> {
        if value_net.output_dim() != 1 {
            return Err(Error::shape("value head output", 1, value_net.output_dim()));
        }
        if policy_net.output_dim() < 2 {
            return Err(Error::Domain("a categorical policy needs at least 2 actions".into()));
        }
        let head_in = trunk.as_ref().map(|t| t.output_dim());
        let obs = trunk.as_ref().map_or(policy_net.input_dim(), |t| t.input_dim());
        let expect_in = head_in.unwrap_or(obs);
        if policy_net.input_dim() != expect_in {
            return Err(Error::shape("policy head input", expect_in, policy_net.input_dim()));
        }
        if value_net.input_dim() != expect_in {
            return Err(Error::shape("value head input", expect_in, value_net.input_dim()));
        }
        Ok(AgentParams {
            policy_net,
            value_net,
            trunk,
        })
    }

    pub fn shared_trunk(&self) -> bool {
        self.trunk.is_some()
    }

    pub fn observation_dim(&self) -> usize {
        self.trunk
            .as_ref()
            .map_or(self.policy_net.input_dim(), MlpParams::input_dim)
    }

    pub fn action_count(&self) -> usize {
        self.policy_net.output_dim()
    }

    pub fn zeros_like(&self) -> Self {
        AgentParams {
            policy_net: self.policy_net.zeros_like(),
            value_net: self.value_net.zeros_like(),
            trunk: self.trunk.as_ref().map(MlpParams::zeros_like),
        }
    }

    /// Networks in canonical order: trunk (if any), policy, value.
    pub fn nets(&self) -> impl Iterator<Item = &MlpParams<F>> {
        self.trunk
            .iter()
            .chain(std::iter::once(&self.policy_net))
            .chain(std::iter::once(&self.value_net))
    }

    pub fn nets_mut(&mut self) -> impl Iterator<Item = &mut MlpParams<F>> {
        self.trunk
            .iter_mut()
            .chain(std::iter::once(&mut self.policy_net))
            .chain(std::iter::once(&mut self.value_net))
    }

    pub fn num_params(&self) -> usize {
        self.nets().map(MlpParams::num_params).sum()
    }

    pub fn to_flat(&self) -> Vec<F> {
        self.nets().flat_map(MlpParams::iter).copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[F]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::shape("AgentParams::set_flat", n, flat.len()));
        }
        let mut off = 0;
        for net in self.nets_mut() {
            let k = net.num_params();
            net.set_flat(&flat[off..off + k])?;
            off += k;
        }
        Ok(())
    }

    pub fn fill_zero(&mut self) {
        self.nets_mut().for_each(MlpParams::fill_zero);
    }

    pub fn scale(&mut self, s: F) {
        self.nets_mut().for_each(|n| n.scale(s));
    }

    pub fn add_scaled(&mut self, other: &Self, s: F) -> Result<()> {
        if self.shared_trunk() != other.shared_trunk() {
            return Err(Error::Domain("trunk layout mismatch".into()));
        }
        for (a, b) in self.nets_mut().zip(other.nets()) {
            a.add_scaled(b, s)?;
        }
        Ok(())
    }

    pub fn sq_norm(&self) -> F {
        self.nets().map(MlpParams::sq_norm).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.nets().all(MlpParams::is_finite)
    }

    /// Full forward pass for one state.
    pub fn trace(&self, state: &[F]) -> Result<AgentTrace<F>> {
        if state.len() != self.observation_dim() {
            return Err(Error::shape("agent state", self.observation_dim(), state.len()));
        }
        let trunk = match &self.trunk {
            Some(t) => {
                let cache = t.forward_cache(state)?;
                let act = t.activation();
                let feat: Vec<F> = cache.output().iter().map(|&z| act.apply(z)).collect();
                Some((cache, feat))
            }
            None => None,
        };
        let head_in = trunk.as_ref().map_or(state, |(_, f)| f.as_slice());
        let policy = self.policy_net.forward_cache(head_in)?;
        let value = self.value_net.forward_cache(head_in)?;
        let mut log_probs = Vec::with_capacity(self.action_count());
        log_softmax_into(policy.output(), &mut log_probs)?;
        let entropy = entropy_from_log_probs(&log_probs);
        Ok(AgentTrace {
            trunk,
            policy,
            value,
            log_probs,
            entropy,
        })
    }

    /// Samples an action from the current policy and records its log-probability, the
    /// critic's value and the policy entropy at `state`.
    pub fn act<R: Rng + ?Sized>(&self, state: &[F], rng: &mut R) -> Result<ActionDecision<F>> {
        let tr = self.trace(state)?;
        let u: f64 = rng.gen();
        let action = sample_categorical(&tr.log_probs, u);
        Ok(ActionDecision {
            action,
            log_prob: tr.log_probs[action],
            value: tr.value(),
            entropy: tr.entropy,
        })
    }

    pub fn value(&self, state: &[F]) -> Result<F> {
        Ok(self.trace(state)?.value())
    }

    pub fn evaluate<S: AsRef<[F]>>(&self, states: &[S], actions: &[usize]) -> Result<Evaluation<F>> {
        Ok(self.evaluate_traced(states, actions)?.0)
    }

    /// Like [`evaluate`](Self::evaluate) but keeps the per-sample traces for backprop.
    pub fn evaluate_traced<S: AsRef<[F]>>(
        &self,
        states: &[S],
        actions: &[usize],
    ) -> Result<(Evaluation<F>, Vec<AgentTrace<F>>)> {
        if states.len() != actions.len() {
            return Err(Error::shape("evaluate actions", states.len(), actions.len()));
        }
        let mut ev = Evaluation {
            log_probs: Vec::with_capacity(states.len()),
            entropies: Vec::with_capacity(states.len()),
            values: Vec::with_capacity(states.len()),
        };
        let mut traces = Vec::with_capacity(states.len());
        for (s, &a) in states.iter().zip(actions) {
            if a >= self.action_count() {
                return Err(Error::Domain(format!(
                    "action {a} out of range for {} actions",
                    self.action_count()
                )));
            }
            let tr = self.trace(s.as_ref())?;
            ev.log_probs.push(tr.log_probs[a]);
            ev.entropies.push(tr.entropy);
            ev.values.push(tr.value());
            traces.push(tr);
        }
        Ok((ev, traces))
    }

    /// Backpropagates per-sample loss sensitivities `dL/dlog_prob`, `dL/dentropy` and
    /// `dL/dvalue` through a trace, accumulating into `grads`.
    pub fn backward_acc(
        &self,
        trace: &AgentTrace<F>,
        action: usize,
        d_log_prob: F,
        d_entropy: F,
        d_value: F,
        grads: &mut Self,
    ) -> Result<()> {
        let n = self.action_count();
        if action >= n {
            return Err(Error::Domain(format!("action {action} out of range for {n} actions")));
        }
        let h = trace.entropy;
        let d_logits: Vec<F> = trace
            .log_probs
            .iter()
            .enumerate()
            .map(|(j, &lp)| {
                let p = lp.exp();
                let onehot = if j == action { F::one() } else { F::zero() };
                // dlog p_a / dz_j = 1[j=a] - p_j ; dH / dz_j = -p_j (log p_j + H)
                d_log_prob * (onehot - p) - d_entropy * p * (lp + h)
            })
            .collect();
        match (&self.trunk, &trace.trunk, &mut grads.trunk) {
            (Some(trunk), Some((tcache, feat)), Some(gtrunk)) => {
                let mut g_feat_p = Vec::new();
                let mut g_feat_v = Vec::new();
                self.policy_net.backward_acc(
                    &trace.policy,
                    &d_logits,
                    &mut grads.policy_net,
                    Some(&mut g_feat_p),
                )?;
                self.value_net.backward_acc(
                    &trace.value,
                    &[d_value],
                    &mut grads.value_net,
                    Some(&mut g_feat_v),
                )?;
                let act = trunk.activation();
                let g_out: Vec<F> = g_feat_p
                    .iter()
                    .zip(&g_feat_v)
                    .zip(tcache.output().iter().zip(feat))
                    .map(|((&a, &b), (&z, &y))| (a + b) * act.derivative(z, y))
                    .collect();
                trunk.backward_acc(tcache, &g_out, gtrunk, None)
            }
            (None, None, None) => {
                self.policy_net
                    .backward_acc(&trace.policy, &d_logits, &mut grads.policy_net, None)?;
                self.value_net
                    .backward_acc(&trace.value, &[d_value], &mut grads.value_net, None)
            }
            _ => Err(Error::Domain("trunk layout mismatch between params, trace and grads".into())),
        }
    }
}

/// Inverse-CDF sampling with a single uniform draw `u` in `[0, 1)`.
pub fn sample_categorical<F: Scalar>(log_probs: &[F], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &lp) in log_probs.iter().enumerate() {
        acc += lp.to_f64_lossy().exp();
        if u < acc {
            return i;
        }
    }
    // Rounding can leave the cumulative sum fractionally below 1.
    log_probs
        .iter()
        .enumerate()
        .rev()
        .find(|(_, lp)| lp.is_finite())
        .map_or(log_probs.len() - 1, |(i, _)| i)
}

/// Adam state for every network of an [`AgentParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct AgentOptimizer<F> {
    pub policy: AdamState<F>,
    pub value: AdamState<F>,
    pub trunk: Option<AdamState<F>>,
}

impl<F: Scalar> AgentOptimizer<F> {
    pub fn new(params: &AgentParams<F>, beta1: F, beta2: F, epsilon: F) -> Self {
        AgentOptimizer {
            policy: AdamState::new(&params.policy_net, beta1, beta2, epsilon),
            value: AdamState::new(&params.value_net, beta1, beta2, epsilon),
            trunk: params
                .trunk
                .as_ref()
                .map(|t| AdamState::new(t, beta1, beta2, epsilon)),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.policy.step_count
    }

    /// Applies Adam to every network. Gradients are checked for finiteness up front so a
    /// failure leaves all networks untouched.
    pub fn step(
        &mut self,
        params: &mut AgentParams<F>,
        grads: &AgentParams<F>,
        learning_rate: F,
    ) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::numerical("adam_step", "non-finite gradient"));
        }
        match (&mut params.trunk, &grads.trunk, &mut self.trunk) {
            (Some(p), Some(g), Some(s)) => adam_step(p, g, s, learning_rate)?,
            (None, None, None) => {}
            _ => return Err(Error::Domain("trunk layout mismatch in optimizer".into())),
        }
        adam_step(&mut params.policy_net, &grads.policy_net, &mut self.policy, learning_rate)?;
        adam_step(&mut params.value_net, &grads.value_net, &mut self.value, learning_rate)
    }
}
