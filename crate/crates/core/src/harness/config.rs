use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::envs::{EnvParams, REGISTRY};
use crate::error::{Error, Result};
use crate::numkit::Activation;
use crate::opr::{OprConfig, ShapingScope};
use crate::ppo::PpoConfig;

/// Flat key/value experiment description. Every key is optional; see `configs/reference.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    // environment
    pub env: String,
    pub chain_length: usize,
    pub grid_size: usize,
    pub hosts: usize,
    pub attack_success: f64,
    pub defense_steps: usize,

    // optimizer
    pub learning_rate: f64,
    pub lr_linear_decay: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,

    // PPO
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub minibatch_size: usize,
    pub epochs_per_update: usize,
    pub normalize_advantages: bool,

    // network
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub shared_trunk: bool,
    pub policy_output_scale: f64,

    // OPR
    pub opr_enabled: bool,
    pub shaping_enabled: bool,
    pub bc_enabled: bool,
    pub shaping_scale: f64,
    pub shaping_bound: f64,
    pub lambda_bc: f64,
    pub bc_epochs: usize,
    pub update_interval: usize,
    pub buffer_capacity: usize,
    pub good_percentile: f64,
    pub return_window: usize,
    pub buffer_in_surrogate: bool,
    pub shaping_scope: ShapingScope,

    // run
    pub total_steps: u64,
    pub steps_per_update: usize,
    pub num_parallel_envs: usize,
    /// Stop early once this many episodes have completed (0 = no limit).
    pub max_episodes: u64,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Save a resumable checkpoint every this many updates (0 = only at the end).
    pub checkpoint_interval: u64,

    // comparison
    /// Return counted as "success" for steps-to-threshold; defaults per environment.
    pub success_return: Option<f64>,
    /// Fraction of the run, by environment steps, whose episodes define the final return.
    pub final_window_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let env = EnvParams::default();
        let ppo = PpoConfig::default();
        let agent = AgentConfig::default();
        let opr = OprConfig::default();
        ExperimentConfig {
            env: env.name,
            chain_length: env.chain_length,
            grid_size: env.grid_size,
            hosts: env.hosts,
            attack_success: env.attack_success,
            defense_steps: env.defense_steps,

            learning_rate: 2.5e-4,
            lr_linear_decay: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,

            gamma: ppo.gamma,
            gae_lambda: ppo.gae_lambda,
            clip_epsilon: ppo.clip_epsilon,
            entropy_coef: ppo.entropy_coef,
            value_coef: ppo.value_coef,
            max_grad_norm: ppo.max_grad_norm,
            minibatch_size: ppo.minibatch_size,
            epochs_per_update: ppo.epochs_per_update,
            normalize_advantages: ppo.normalize_advantages,

            hidden_sizes: agent.hidden_sizes,
            activation: agent.activation,
            shared_trunk: agent.shared_trunk,
            policy_output_scale: agent.policy_output_scale,

            opr_enabled: true,
            shaping_enabled: opr.shaping_enabled,
            bc_enabled: opr.bc_enabled,
            shaping_scale: opr.alpha,
            shaping_bound: opr.delta,
            lambda_bc: opr.lambda_bc,
            bc_epochs: opr.bc_epochs,
            update_interval: DESK_UPDATE_INTERVAL,
            buffer_capacity: opr.buffer_capacity,
            good_percentile: opr.percentile,
            return_window: opr.window,
            buffer_in_surrogate: opr.buffer_in_surrogate,
            shaping_scope: opr.shaping_scope,

            total_steps: 300_000,
            steps_per_update: 2048,
            num_parallel_envs: 4,
            max_episodes: 0,
            seed: 0,
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from("runs/default"),
            checkpoint_interval: 0,

            success_return: None,
            final_window_fraction: 0.1,
        }
    }
}

/// BC cadence at desk scale, in PPO updates.
pub const DESK_UPDATE_INTERVAL: usize = 1;

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !REGISTRY.iter().any(|(n, _)| *n == self.env) {
            return bad(format!("unknown environment `{}`", self.env));
        }
        crate::envs::Env::from_params(&self.env_params())?;
        self.ppo().validate()?;
        self.opr().validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive".into());
        }
        if self.hidden_sizes.contains(&0) {
            return bad("hidden_sizes entries must be positive".into());
        }
        if self.shared_trunk && self.hidden_sizes.is_empty() {
            return bad("shared_trunk needs at least one hidden layer".into());
        }
        if self.num_parallel_envs == 0 || self.steps_per_update == 0 {
            return bad("num_parallel_envs and steps_per_update must be positive".into());
        }
        if !self.steps_per_update.is_multiple_of(self.num_parallel_envs) {
            return bad(format!(
                "steps_per_update ({}) must be divisible by num_parallel_envs ({})",
                self.steps_per_update, self.num_parallel_envs
            ));
        }
        if !self.steps_per_update.is_multiple_of(self.minibatch_size) {
            return bad(format!(
                "steps_per_update ({}) must be divisible by minibatch_size ({})",
                self.steps_per_update, self.minibatch_size
            ));
        }
        if !(self.final_window_fraction > 0.0 && self.final_window_fraction <= 1.0) {
            return bad("final_window_fraction must lie in (0, 1]".into());
        }
        Ok(())
    }

    pub fn env_params(&self) -> EnvParams {
        EnvParams {
            name: self.env.clone(),
            chain_length: self.chain_length,
            grid_size: self.grid_size,
            hosts: self.hosts,
            attack_success: self.attack_success,
            defense_steps: self.defense_steps,
        }
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            gamma: self.gamma,
            gae_lambda: self.gae_lambda,
            clip_epsilon: self.clip_epsilon,
            entropy_coef: self.entropy_coef,
            value_coef: self.value_coef,
            max_grad_norm: self.max_grad_norm,
            minibatch_size: self.minibatch_size,
            epochs_per_update: self.epochs_per_update,
            normalize_advantages: self.normalize_advantages,
        }
    }

    pub fn agent(&self) -> AgentConfig {
        AgentConfig {
            hidden_sizes: self.hidden_sizes.clone(),
            activation: self.activation,
            shared_trunk: self.shared_trunk,
            policy_output_scale: self.policy_output_scale,
        }
    }

    /// OPR settings as configured (independent of `opr_enabled`).
    pub fn opr(&self) -> OprConfig {
        OprConfig {
            alpha: self.shaping_scale,
            delta: self.shaping_bound,
            lambda_bc: self.lambda_bc,
            bc_epochs: self.bc_epochs,
            update_interval: self.update_interval,
            shaping_enabled: self.shaping_enabled,
            bc_enabled: self.bc_enabled,
            buffer_capacity: self.buffer_capacity,
            percentile: self.good_percentile,
            window: self.return_window,
            buffer_in_surrogate: self.buffer_in_surrogate,
            shaping_scope: self.shaping_scope,
        }
    }

    /// OPR settings that actually act on training: with `opr_enabled = false` every
    /// mechanism is switched off. The buffer is still maintained for diagnostics.
    pub fn effective_opr(&self) -> OprConfig {
        let mut o = self.opr();
        if !self.opr_enabled {
            o.shaping_enabled = false;
            o.bc_enabled = false;
            o.buffer_in_surrogate = false;
            o.shaping_scope = ShapingScope::Rollout;
        }
        o
    }

    pub fn num_updates(&self) -> u64 {
        self.total_steps.div_ceil(self.steps_per_update as u64)
    }

    pub fn success_threshold(&self) -> Option<f64> {
        self.success_return.or(match self.env.as_str() {
            "deep_chain" => Some(crate::envs::DEEP_CHAIN_GOAL),
            "distractor_grid" => Some(crate::envs::GRID_GOAL),
            _ => None,
        })
    }
}
