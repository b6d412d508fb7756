//! Deterministic, seeded environments with discrete, hashable states.
//!
//! Observations are one-hot or multi-hot encodings of the underlying discrete state and
//! `state_key` identifies that state exactly, which is what the good-episode lookup needs.

pub mod deep_chain;
pub mod distractor_grid;
mod dp;
pub mod mini_defense;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use deep_chain::DeepChain;
pub(crate) use deep_chain::GOAL_REWARD as DEEP_CHAIN_GOAL;
pub(crate) use distractor_grid::GOAL_REWARD as GRID_GOAL;
pub use distractor_grid::DistractorGrid;
pub use dp::{optimal_return_of, policy_value_of, TabularModel, MAX_DP_STATES};
pub use mini_defense::{DefenseAction, MiniDefense};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub observation_dim: usize,
    pub action_count: usize,
    pub max_episode_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    /// Set when the horizon is reached without termination.
    pub truncated: bool,
    pub state_key: u64,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

pub trait Environment {
    fn spec(&self) -> EnvSpec;

    /// Starts a new episode. The initial state is a deterministic function of `seed`.
    fn reset(&mut self, seed: u64) -> StepResult;

    /// Errors with [`Error::Usage`] after the episode has ended or for an invalid action.
    fn step(&mut self, action: usize) -> Result<StepResult>;
}

pub(crate) fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

pub(crate) fn check_action(action: usize, count: usize) -> Result<()> {
    if action >= count {
        return Err(Error::Usage(format!("action {action} out of range for {count} actions")));
    }
    Ok(())
}

/// Environment selection and parameters, as read from the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvParams {
    pub name: String,
    pub chain_length: usize,
    pub grid_size: usize,
    pub hosts: usize,
    pub attack_success: f64,
    pub defense_steps: usize,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            name: "deep_chain".into(),
            chain_length: 20,
            grid_size: 7,
            hosts: 5,
            attack_success: 0.75,
            defense_steps: 30,
        }
    }
}

/// Registered environment names with a one-line description each.
pub const REGISTRY: &[(&str, &str)] = &[
    (
        "deep_chain",
        "chain of N cells; RIGHT advances, LEFT resets with +0.01; +10 at the end; horizon 2N",
    ),
    (
        "distractor_grid",
        "grid world; +1 distractor next to the start, +20 in the far corner; horizon 60",
    ),
    (
        "mini_defense",
        "defend H hosts against a seeded attacker path; -1 per compromised host per step, -10 on the crown jewel",
    ),
];

/// Any bundled environment. Plain data, so a run can be checkpointed mid-episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Env {
    DeepChain(DeepChain),
    DistractorGrid(DistractorGrid),
    MiniDefense(MiniDefense),
}

impl Env {
    pub fn from_params(p: &EnvParams) -> Result<Self> {
        match p.name.as_str() {
            "deep_chain" => Ok(Env::DeepChain(DeepChain::new(p.chain_length)?)),
            "distractor_grid" => Ok(Env::DistractorGrid(DistractorGrid::new(p.grid_size)?)),
            "mini_defense" => Ok(Env::MiniDefense(MiniDefense::new(
                p.hosts,
                p.attack_success,
                p.defense_steps,
            )?)),
            other => Err(Error::Config(format!(
                "unknown environment `{other}` (known: {})",
                REGISTRY.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    /// Exact optimal undiscounted return by dynamic programming. MiniDefense is solved
    /// for the attacker path drawn by `seed`.
    pub fn optimal_return(&self, seed: u64) -> Result<f64> {
        match self {
            Env::DeepChain(e) => optimal_return_of(e),
            Env::DistractorGrid(e) => optimal_return_of(e),
            Env::MiniDefense(e) => {
                let mut e = e.clone();
                e.reset(seed);
                optimal_return_of(&e)
            }
        }
    }

    fn inner(&self) -> &dyn Environment {
        match self {
            Env::DeepChain(e) => e,
            Env::DistractorGrid(e) => e,
            Env::MiniDefense(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Environment {
        match self {
            Env::DeepChain(e) => e,
            Env::DistractorGrid(e) => e,
            Env::MiniDefense(e) => e,
        }
    }
}

impl Environment for Env {
    fn spec(&self) -> EnvSpec {
        self.inner().spec()
    }

    fn reset(&mut self, seed: u64) -> StepResult {
        self.inner_mut().reset(seed)
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        self.inner_mut().step(action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_builds_every_env() {
        for (name, _) in REGISTRY {
            let p = EnvParams {
                name: name.to_string(),
                ..EnvParams::default()
            };
            let mut env = Env::from_params(&p).unwrap();
            let spec = env.spec();
            assert!(spec.action_count >= 2 && spec.max_episode_steps > 0);
            let r = env.reset(3);
            assert_eq!(r.observation.len(), spec.observation_dim);
            assert_eq!(r.reward, 0.0);
            assert!(!r.done());
        }
        let bad = EnvParams {
            name: "pong".into(),
            ..EnvParams::default()
        };
        assert!(matches!(Env::from_params(&bad), Err(Error::Config(_))));
    }
}
