use serde::{Deserialize, Serialize};

use super::{check_action, one_hot, EnvSpec, Environment, StepResult, TabularModel};
use crate::error::{Error, Result};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
pub const TRAP_REWARD: f64 = 0.01;
pub const GOAL_REWARD: f64 = 10.0;

/// Cells `0..=N`. RIGHT moves one cell along; LEFT jumps back to 0 and pays
/// [`TRAP_REWARD`]. Entering cell `N` pays [`GOAL_REWARD`] and terminates. Horizon `2N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepChain {
    length: usize,
    position: usize,
    steps: usize,
    done: bool,
}

impl DeepChain {
    pub fn new(length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::Config("chain_length must be positive".into()));
        }
        Ok(DeepChain {
            length,
            position: 0,
            steps: 0,
            done: true,
        })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn position(&self) -> usize {
        self.position
    }

    fn horizon(&self) -> usize {
        2 * self.length
    }

    fn observe(&self, reward: f64, terminated: bool, truncated: bool) -> StepResult {
        StepResult {
            observation: one_hot(self.length + 1, self.position),
            reward,
            terminated,
            truncated,
            state_key: self.position as u64,
        }
    }

    /// `(next position, reward, terminated)`.
    fn transition(length: usize, position: usize, action: usize) -> (usize, f64, bool) {
        if action == LEFT {
            (0, TRAP_REWARD, false)
        } else if position + 1 == length {
            (length, GOAL_REWARD, true)
        } else {
            (position + 1, 0.0, false)
        }
    }
}

impl Environment for DeepChain {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: format!("deep_chain({})", self.length),
            observation_dim: self.length + 1,
            action_count: 2,
            max_episode_steps: self.horizon(),
        }
    }

    fn reset(&mut self, _seed: u64) -> StepResult {
        self.position = 0;
        self.steps = 0;
        self.done = false;
        self.observe(0.0, false, false)
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        check_action(action, 2)?;
        let (pos, reward, terminated) = Self::transition(self.length, self.position, action);
        self.position = pos;
        self.steps += 1;
        let truncated = !terminated && self.steps >= self.horizon();
        self.done = terminated || truncated;
        Ok(self.observe(reward, terminated, truncated))
    }
}

impl TabularModel for DeepChain {
    type State = usize;

    fn initial_state(&self) -> usize {
        0
    }

    fn horizon(&self) -> usize {
        2 * self.length
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn outcomes(&self, &state: &usize, action: usize) -> Vec<(f64, f64, usize, bool)> {
        let (next, r, term) = Self::transition(self.length, state, action);
        vec![(1.0, r, next, term)]
    }
}
