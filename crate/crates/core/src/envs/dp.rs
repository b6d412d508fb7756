use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Cap on `(state, time)` pairs the exact solver will visit.
pub const MAX_DP_STATES: usize = 2_000_000;

/// Explicit finite-horizon model of an environment, for exact solution.
pub trait TabularModel {
    type State: Clone + Eq + Hash;

    fn initial_state(&self) -> Self::State;

    fn horizon(&self) -> usize;

    fn num_actions(&self) -> usize;

    /// `(probability, reward, next state, terminal)` for each outcome.
    fn outcomes(&self, state: &Self::State, action: usize) -> Vec<(f64, f64, Self::State, bool)>;
}

/// Maximum expected undiscounted return over all policies, by memoised backward induction
/// on `(state, steps taken)`.
pub fn optimal_return_of<M: TabularModel>(model: &M) -> Result<f64> {
    let mut memo: HashMap<(M::State, usize), f64> = HashMap::new();
    let s0 = model.initial_state();
    solve(model, &s0, 0, &mut memo)
}

fn solve<M: TabularModel>(
    model: &M,
    state: &M::State,
    t: usize,
    memo: &mut HashMap<(M::State, usize), f64>,
) -> Result<f64> {
    if t >= model.horizon() {
        return Ok(0.0);
    }
    if let Some(&v) = memo.get(&(state.clone(), t)) {
        return Ok(v);
    }
    if memo.len() >= MAX_DP_STATES {
        return Err(Error::Unsupported(format!(
            "state space exceeds {MAX_DP_STATES} (state, time) pairs"
        )));
    }
    let mut best = f64::NEG_INFINITY;
    for a in 0..model.num_actions() {
        let mut q = 0.0;
        for (p, r, next, terminal) in model.outcomes(state, a) {
            let future = if terminal { 0.0 } else { solve(model, &next, t + 1, memo)? };
            q += p * (r + future);
        }
        best = best.max(q);
    }
    memo.insert((state.clone(), t), best);
    Ok(best)
}

/// Expected undiscounted return of a fixed (possibly time-dependent) policy.
pub fn policy_value_of<M, P>(model: &M, policy: P) -> f64
where
    M: TabularModel,
    P: Fn(&M::State, usize) -> usize,
{
    fn go<M: TabularModel, P: Fn(&M::State, usize) -> usize>(
        model: &M,
        policy: &P,
        s: &M::State,
        t: usize,
    ) -> f64 {
        if t >= model.horizon() {
            return 0.0;
        }
        model
            .outcomes(s, policy(s, t))
            .into_iter()
            .map(|(p, r, next, term)| {
                p * (r + if term { 0.0 } else { go(model, policy, &next, t + 1) })
            })
            .sum()
    }
    go(model, &policy, &model.initial_state(), 0)
}
