use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_action, EnvSpec, Environment, StepResult, TabularModel};
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, rng_for, Stream};

pub const COMPROMISE_PENALTY: f64 = -1.0;
pub const CROWN_JEWEL_PENALTY: f64 = -10.0;
pub const MAX_HOSTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefenseAction {
    /// Blocks and reveals an attack on this host during this step.
    Monitor(usize),
    /// Cleans the host; the attacker has to take it again.
    Restore(usize),
    /// Plants a decoy that absorbs the next attack on this host.
    Decoy(usize),
}

impl DefenseAction {
    pub fn decode(action: usize, hosts: usize) -> Self {
        let host = action % hosts;
        match action / hosts {
            0 => DefenseAction::Monitor(host),
            1 => DefenseAction::Restore(host),
            _ => DefenseAction::Decoy(host),
        }
    }

    pub fn encode(self, hosts: usize) -> usize {
        match self {
            DefenseAction::Monitor(h) => h,
            DefenseAction::Restore(h) => hosts + h,
            DefenseAction::Decoy(h) => 2 * hosts + h,
        }
    }
}

/// Miniature network defense game.
///
/// The attacker walks a path through the user hosts, drawn from the episode seed, and
/// finishes on the crown jewel (the last host). Each step it attacks the first host on its
/// path that is not yet compromised and succeeds with probability `attack_success` unless
/// the defender monitors that host this step or a decoy sits on it. The defender loses 1 per
/// compromised host per step and 10 more whenever the crown jewel falls.
///
/// Observation: compromised bits, decoy bits, and a one-hot of the host where an attack was
/// caught on the previous step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiniDefense {
    hosts: usize,
    attack_success: f64,
    episode_steps: usize,
    path: Vec<usize>,
    compromised: u32,
    decoys: u32,
    alert: Option<usize>,
    seed: u64,
    steps: usize,
    done: bool,
}

/// DP state: `(compromised, decoys)`; the alert does not influence dynamics.
type DefenseState = (u32, u32);

impl MiniDefense {
    pub fn new(hosts: usize, attack_success: f64, episode_steps: usize) -> Result<Self> {
        if !(2..=MAX_HOSTS).contains(&hosts) {
            return Err(Error::Config(format!("hosts must lie in 2..={MAX_HOSTS}")));
        }
        if !(0.0..=1.0).contains(&attack_success) {
            return Err(Error::Config("attack_success must lie in [0, 1]".into()));
        }
        if episode_steps == 0 {
            return Err(Error::Config("defense_steps must be positive".into()));
        }
        Ok(MiniDefense {
            hosts,
            attack_success,
            episode_steps,
            path: (0..hosts).collect(),
            compromised: 0,
            decoys: 0,
            alert: None,
            seed: 0,
            steps: 0,
            done: true,
        })
    }

    pub fn hosts(&self) -> usize {
        self.hosts
    }

    pub fn crown_jewel(&self) -> usize {
        self.hosts - 1
    }

    pub fn path(&self) -> &[usize] {
        &self.path
    }

    pub fn compromised(&self) -> u32 {
        self.compromised
    }

    fn target(&self, compromised: u32) -> Option<usize> {
        self.path.iter().copied().find(|&h| compromised & (1 << h) == 0)
    }

    fn attack_roll(&self) -> f64 {
        let bits = derive_seed(self.seed, Stream::Attacker, &[self.steps as u64]);
        (bits >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Defender move then attacker move. Returns the successor for a failed and a
    /// successful attack as `(compromised, decoys, alert, reward)`; they coincide when the
    /// attack cannot succeed.
    #[allow(clippy::type_complexity)]
    fn transition(
        &self,
        (mut comp, mut dec): DefenseState,
        action: usize,
    ) -> ((u32, u32, Option<usize>, f64), Option<(u32, u32, Option<usize>, f64)>) {
        let mut monitored = None;
        match DefenseAction::decode(action, self.hosts) {
            DefenseAction::Monitor(h) => monitored = Some(h),
            DefenseAction::Restore(h) => comp &= !(1 << h),
            DefenseAction::Decoy(h) => dec |= 1 << h,
        }
        let loss = |c: u32| COMPROMISE_PENALTY * c.count_ones() as f64;
        let Some(target) = self.target(comp) else {
            return ((comp, dec, None, loss(comp)), None);
        };
        if monitored == Some(target) {
            return ((comp, dec, Some(target), loss(comp)), None);
        }
        if dec & (1 << target) != 0 {
            dec &= !(1 << target);
            return ((comp, dec, Some(target), loss(comp)), None);
        }
        let fail = (comp, dec, None, loss(comp));
        let hit = comp | (1 << target);
        let bonus = if target == self.crown_jewel() { CROWN_JEWEL_PENALTY } else { 0.0 };
        (fail, Some((hit, dec, None, loss(hit) + bonus)))
    }

    fn observe(&self, reward: f64, truncated: bool) -> StepResult {
        let h = self.hosts;
        let mut obs = vec![0.0; 3 * h];
        for i in 0..h {
            if self.compromised & (1 << i) != 0 {
                obs[i] = 1.0;
            }
            if self.decoys & (1 << i) != 0 {
                obs[h + i] = 1.0;
            }
        }
        if let Some(a) = self.alert {
            obs[2 * h + a] = 1.0;
        }
        StepResult {
            observation: obs,
            reward,
            terminated: false,
            truncated,
            state_key: self.state_key(),
        }
    }

    /// Injective over (compromised, decoys, alert, attacker path).
    fn state_key(&self) -> u64 {
        let alert = self.alert.map_or(0, |a| a as u64 + 1);
        let path_code = self
            .path
            .iter()
            .fold(0u64, |acc, &p| acc * self.hosts as u64 + p as u64);
        self.compromised as u64 | (self.decoys as u64) << 8 | alert << 16 | path_code << 20
    }
}

impl Environment for MiniDefense {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: format!("mini_defense({})", self.hosts),
            observation_dim: 3 * self.hosts,
            action_count: 3 * self.hosts,
            max_episode_steps: self.episode_steps,
        }
    }

    fn reset(&mut self, seed: u64) -> StepResult {
        let mut users: Vec<usize> = (0..self.hosts - 1).collect();
        users.shuffle(&mut rng_for(seed, Stream::Attacker, &[u64::MAX]));
        users.push(self.crown_jewel());
        self.path = users;
        self.compromised = 0;
        self.decoys = 0;
        self.alert = None;
        self.seed = seed;
        self.steps = 0;
        self.done = false;
        self.observe(0.0, false)
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        check_action(action, 3 * self.hosts)?;
        let (fail, hit) = self.transition((self.compromised, self.decoys), action);
        let (comp, dec, alert, reward) = match hit {
            Some(h) if self.attack_roll() < self.attack_success => h,
            _ => fail,
        };
        self.compromised = comp;
        self.decoys = dec;
        self.alert = alert;
        self.steps += 1;
        let truncated = self.steps >= self.episode_steps;
        self.done = truncated;
        Ok(self.observe(reward, truncated))
    }
}

impl TabularModel for MiniDefense {
    type State = DefenseState;

    fn initial_state(&self) -> DefenseState {
        (0, 0)
    }

    fn horizon(&self) -> usize {
        self.episode_steps
    }

    fn num_actions(&self) -> usize {
        3 * self.hosts
    }

    fn outcomes(&self, state: &DefenseState, action: usize) -> Vec<(f64, f64, DefenseState, bool)> {
        let (fail, hit) = self.transition(*state, action);
        match hit {
            None => vec![(1.0, fail.3, (fail.0, fail.1), false)],
            Some(h) => {
                let p = self.attack_success;
                vec![
                    (1.0 - p, fail.3, (fail.0, fail.1), false),
                    (p, h.3, (h.0, h.1), false),
                ]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{optimal_return_of, policy_value_of};

    #[test]
    fn reset_is_deterministic_and_clean() {
        let mut e = MiniDefense::new(5, 0.75, 30).unwrap();
        let a = e.reset(17);
        let path = e.path().to_vec();
        assert_eq!(e.reset(17), a);
        assert_eq!(e.path(), path.as_slice());
        assert_eq!(*path.last().unwrap(), 4);
        assert!(a.observation.iter().all(|&x| x == 0.0));
        let distinct = (0..20u64)
            .map(|s| {
                e.reset(s);
                e.path().to_vec()
            })
            .collect::<std::collections::HashSet<_>>();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn undefended_attacker_takes_one_hop_per_step() {
        let mut e = MiniDefense::new(3, 1.0, 30).unwrap();
        e.reset(5);
        let path = e.path().to_vec();
        // Restoring the clean crown jewel does nothing.
        let noop = DefenseAction::Restore(2).encode(3);
        let r1 = e.step(noop).unwrap();
        assert_eq!(r1.reward, -1.0);
        assert_eq!(e.compromised(), 1 << path[0]);
        let r2 = e.step(noop).unwrap();
        assert_eq!(r2.reward, -2.0);
        let r3 = e.step(DefenseAction::Monitor(0).encode(3)).unwrap();
        // Jewel falls: three compromised hosts plus the crown-jewel penalty.
        assert_eq!(r3.reward, -3.0 - 10.0);
    }

    #[test]
    fn monitor_and_decoy_block() {
        let mut e = MiniDefense::new(3, 1.0, 30).unwrap();
        e.reset(1);
        let first = e.path()[0];
        let r = e.step(DefenseAction::Monitor(first).encode(3)).unwrap();
        assert_eq!(r.reward, 0.0);
        assert_eq!(r.observation[6 + first], 1.0);
        e.step(DefenseAction::Decoy(first).encode(3)).unwrap();
        // The decoy was consumed by the attack in the same step.
        assert_eq!(e.compromised(), 0);
        assert_eq!(e.decoys, 0);
        let r = e.step(DefenseAction::Decoy((first + 1) % 2).encode(3)).unwrap();
        assert_eq!(r.reward, -1.0);
    }

    #[test]
    fn episode_length_and_usage_error() {
        let mut e = MiniDefense::new(2, 0.5, 30).unwrap();
        e.reset(0);
        for i in 0..30 {
            let r = e.step(0).unwrap();
            assert_eq!(r.truncated, i == 29);
            assert!(!r.terminated);
        }
        assert!(matches!(e.step(0), Err(Error::Usage(_))));
        assert!(matches!(
            MiniDefense::new(2, 0.5, 30).unwrap().step(0),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn two_host_dp_matches_exhaustive_search() {
        // Deterministic attacker and a short horizon so open-loop search is exact.
        for seed in [0u64, 1] {
            let mut e = MiniDefense::new(2, 1.0, 6).unwrap();
            e.reset(seed);
            let template = e.clone();
            let mut best = f64::NEG_INFINITY;
            for code in 0..6usize.pow(6) {
                let mut env = template.clone();
                let mut c = code;
                let mut ret = 0.0;
                for _ in 0..6 {
                    ret += env.step(c % 6).unwrap().reward;
                    c /= 6;
                }
                best = best.max(ret);
            }
            let dp = optimal_return_of(&template).unwrap();
            assert_eq!(dp, best);
            // Monitoring the first host of the path every step blocks everything.
            assert_eq!(best, 0.0);
        }
    }

    #[test]
    fn dp_policy_value_matches_simulation() {
        let mut e = MiniDefense::new(3, 0.6, 12).unwrap();
        e.reset(4);
        let template = e.clone();
        let jewel_decoy = DefenseAction::Decoy(2).encode(3);
        let restore_first = DefenseAction::Restore(template.path()[0]).encode(3);
        let policy = |&(comp, _): &DefenseState, _t: usize| {
            if comp != 0 {
                restore_first
            } else {
                jewel_decoy
            }
        };
        let exact = policy_value_of(&template, policy);
        let episodes = 20_000;
        let mut sum = 0.0;
        for ep in 0..episodes {
            let mut env = template.clone();
            env.seed = 1_000 + ep;
            env.steps = 0;
            let mut ret = 0.0;
            for _ in 0..12 {
                let a = policy(&(env.compromised, env.decoys), 0);
                ret += env.step(a).unwrap().reward;
            }
            sum += ret;
        }
        let mc = sum / episodes as f64;
        assert!((mc - exact).abs() < 0.1, "mc {mc} exact {exact}");
        let opt = optimal_return_of(&template).unwrap();
        assert!(opt >= exact);
    }
}
