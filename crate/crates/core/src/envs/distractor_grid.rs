use serde::{Deserialize, Serialize};

use super::{check_action, one_hot, EnvSpec, Environment, StepResult, TabularModel};
use crate::error::{Error, Result};

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

pub const DISTRACTOR_REWARD: f64 = 1.0;
pub const GOAL_REWARD: f64 = 20.0;
pub const HORIZON: usize = 60;

/// Square grid, start in the top-left corner. A distractor two cells to the right of the
/// start pays 1 and ends the episode; the opposite corner pays 20 and ends the episode.
/// Moves into a wall leave the agent in place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistractorGrid {
    size: usize,
    row: usize,
    col: usize,
    steps: usize,
    done: bool,
}

type Cell = (usize, usize);

impl DistractorGrid {
    pub fn new(size: usize) -> Result<Self> {
        if size < 4 {
            return Err(Error::Config("grid_size must be at least 4".into()));
        }
        Ok(DistractorGrid {
            size,
            row: 0,
            col: 0,
            steps: 0,
            done: true,
        })
    }

    pub fn start(&self) -> Cell {
        (0, 0)
    }

    pub fn distractor(&self) -> Cell {
        (0, 2)
    }

    pub fn goal(&self) -> Cell {
        (self.size - 1, self.size - 1)
    }

    pub fn position(&self) -> Cell {
        (self.row, self.col)
    }

    fn key(&self, (r, c): Cell) -> u64 {
        (r * self.size + c) as u64
    }

    /// `(next cell, reward, terminated)`.
    fn transition(&self, (r, c): Cell, action: usize) -> (Cell, f64, bool) {
        let last = self.size - 1;
        let next = match action {
            UP => (r.saturating_sub(1), c),
            DOWN => ((r + 1).min(last), c),
            LEFT => (r, c.saturating_sub(1)),
            _ => (r, (c + 1).min(last)),
        };
        if next == self.goal() {
            (next, GOAL_REWARD, true)
        } else if next == self.distractor() {
            (next, DISTRACTOR_REWARD, true)
        } else {
            (next, 0.0, false)
        }
    }

    fn observe(&self, reward: f64, terminated: bool, truncated: bool) -> StepResult {
        let cell = self.position();
        StepResult {
            observation: one_hot(self.size * self.size, self.key(cell) as usize),
            reward,
            terminated,
            truncated,
            state_key: self.key(cell),
        }
    }
}

impl Environment for DistractorGrid {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: format!("distractor_grid({0}x{0})", self.size),
            observation_dim: self.size * self.size,
            action_count: 4,
            max_episode_steps: HORIZON,
        }
    }

    fn reset(&mut self, _seed: u64) -> StepResult {
        (self.row, self.col) = self.start();
        self.steps = 0;
        self.done = false;
        self.observe(0.0, false, false)
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        check_action(action, 4)?;
        let (cell, reward, terminated) = self.transition(self.position(), action);
        (self.row, self.col) = cell;
        self.steps += 1;
        let truncated = !terminated && self.steps >= HORIZON;
        self.done = terminated || truncated;
        Ok(self.observe(reward, terminated, truncated))
    }
}

impl TabularModel for DistractorGrid {
    type State = Cell;

    fn initial_state(&self) -> Cell {
        self.start()
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn outcomes(&self, state: &Cell, action: usize) -> Vec<(f64, f64, Cell, bool)> {
        let (next, r, term) = self.transition(*state, action);
        vec![(1.0, r, next, term)]
    }
}
