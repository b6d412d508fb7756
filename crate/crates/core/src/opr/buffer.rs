use std::collections::{HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One executed step: `(s, a, r, pi_old(a|s))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition<F> {
    pub state: Vec<F>,
    pub state_key: u64,
    pub action: usize,
    /// Raw (unshaped) reward.
    pub reward: F,
    /// `log pi(a|s)` of the policy that acted.
    pub behavior_log_prob: F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode<F> {
    transitions: Vec<Transition<F>>,
    episodic_return: F,
    episode_id: u64,
    terminated: bool,
}

impl<F: Scalar> Episode<F> {
    /// The return is the undiscounted sum of the raw rewards.
    pub fn new(episode_id: u64, transitions: Vec<Transition<F>>, terminated: bool) -> Result<Self> {
        if let Some(t) = transitions.iter().find(|t| !(t.behavior_log_prob <= F::zero())) {
            return Err(Error::Domain(format!(
                "behavior log-prob must be <= 0, got {}",
                t.behavior_log_prob
            )));
        }
        let episodic_return = transitions.iter().map(|t| t.reward).sum();
        Ok(Episode {
            transitions,
            episodic_return,
            episode_id,
            terminated,
        })
    }

    pub fn transitions(&self) -> &[Transition<F>] {
        &self.transitions
    }

    pub fn episodic_return(&self) -> F {
        self.episodic_return
    }

    pub fn episode_id(&self) -> u64 {
        self.episode_id
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Linear interpolation between closest ranks: `rank = p/100 * (n - 1)` over the sorted
/// values. Returns negative infinity for an empty slice.
pub fn percentile<F: Scalar>(values: &[F], p: f64) -> F {
    if values.is_empty() {
        return F::neg_infinity();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite returns"));
    let rank = p.clamp(0.0, 100.0) / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = F::lit(rank - lo as f64);
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// FIFO of the `K` most recent episodic returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnWindow<F> {
    capacity: usize,
    returns: VecDeque<F>,
}

impl<F: Scalar> ReturnWindow<F> {
    pub fn new(capacity: usize) -> Self {
        ReturnWindow {
            capacity,
            returns: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, r: F) {
        if self.capacity == 0 {
            return;
        }
        if self.returns.len() == self.capacity {
            self.returns.pop_front();
        }
        self.returns.push_back(r);
    }

    pub fn percentile(&self, p: f64) -> F {
        let (a, b) = self.returns.as_slices();
        if b.is_empty() {
            percentile(a, p)
        } else {
            percentile(&self.returns.iter().copied().collect::<Vec<_>>(), p)
        }
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &F> {
        self.returns.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Admission {
    Admitted,
    Rejected,
    /// The episode alone is longer than the buffer capacity.
    Oversize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissionDecision<F> {
    pub outcome: Admission,
    /// Threshold the return was compared against (negative infinity for an empty window).
    pub threshold: F,
    /// Ids of episodes evicted to make room, oldest first.
    pub evicted: Vec<u64>,
}

/// Serializable state of a [`GoodEpisodeBuffer`]; the lookup table is rebuilt on restore.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferSnapshot<F> {
    pub max_transitions: usize,
    pub percentile: f64,
    pub window: ReturnWindow<F>,
    pub episodes: Vec<Episode<F>>,
    pub last_threshold: Option<F>,
}

/// Capacity-bounded store of high-return episodes.
#[derive(Debug, Clone)]
pub struct GoodEpisodeBuffer<F> {
    episodes: VecDeque<Episode<F>>,
    total_transitions: usize,
    max_transitions: usize,
    percentile: f64,
    window: ReturnWindow<F>,
    lookup: HashMap<(u64, usize), F>,
    last_threshold: Option<F>,
}

impl<F: Scalar> GoodEpisodeBuffer<F> {
    pub fn new(max_transitions: usize, percentile: f64, window: usize) -> Self {
        GoodEpisodeBuffer {
            episodes: VecDeque::new(),
            total_transitions: 0,
            max_transitions,
            percentile,
            window: ReturnWindow::new(window),
            lookup: HashMap::new(),
            last_threshold: None,
        }
    }

    /// Current admission threshold `tau` from the window alone.
    pub fn threshold(&self) -> F {
        self.window.percentile(self.percentile)
    }

    /// Threshold used by the most recent `record_episode` call.
    pub fn last_threshold(&self) -> Option<F> {
        self.last_threshold
    }

    /// Judges a completed episode against the returns before it, then records its return.
    ///
    /// Admission requires `R > tau` strictly. Admitted episodes push out the oldest stored
    /// episodes until the capacity holds.
    pub fn record_episode(&mut self, episode: Episode<F>) -> AdmissionDecision<F> {
        let threshold = self.threshold();
        self.last_threshold = Some(threshold);
        let ret = episode.episodic_return();
        self.window.push(ret);
        if !(ret > threshold) {
            return AdmissionDecision {
                outcome: Admission::Rejected,
                threshold,
                evicted: Vec::new(),
            };
        }
        if episode.len() > self.max_transitions {
            return AdmissionDecision {
                outcome: Admission::Oversize,
                threshold,
                evicted: Vec::new(),
            };
        }
        let mut evicted = Vec::new();
        while self.total_transitions + episode.len() > self.max_transitions {
            let old = self.episodes.pop_front().expect("capacity accounting");
            self.total_transitions -= old.len();
            evicted.push(old.episode_id());
        }
        if !evicted.is_empty() {
            self.rebuild_lookup();
        }
        for t in episode.transitions() {
            self.lookup.insert((t.state_key, t.action), t.behavior_log_prob);
        }
        self.total_transitions += episode.len();
        self.episodes.push_back(episode);
        AdmissionDecision {
            outcome: Admission::Admitted,
            threshold,
            evicted,
        }
    }

    fn rebuild_lookup(&mut self) {
        self.lookup = Self::build_lookup(self.episodes.iter());
    }

    fn build_lookup<'a>(episodes: impl Iterator<Item = &'a Episode<F>>) -> HashMap<(u64, usize), F> {
        let mut m = HashMap::new();
        for ep in episodes {
            for t in ep.transitions() {
                m.insert((t.state_key, t.action), t.behavior_log_prob);
            }
        }
        m
    }

    /// Recorded `log pi_good(a|s)` of the most recently admitted matching transition.
    pub fn lookup_good_log_prob(&self, state_key: u64, action: usize) -> Option<F> {
        self.lookup.get(&(state_key, action)).copied()
    }

    /// True iff the incremental lookup table equals one rebuilt from the stored episodes.
    pub fn lookup_consistent(&self) -> bool {
        Self::build_lookup(self.episodes.iter()) == self.lookup
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode<F>> {
        self.episodes.iter()
    }

    pub fn episode_ids(&self) -> Vec<u64> {
        self.episodes.iter().map(Episode::episode_id).collect()
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn len(&self) -> usize {
        self.total_transitions
    }

    pub fn is_empty(&self) -> bool {
        self.total_transitions == 0
    }

    pub fn capacity(&self) -> usize {
        self.max_transitions
    }

    pub fn window(&self) -> &ReturnWindow<F> {
        &self.window
    }

    /// Transition by flat index over the stored episodes, oldest first.
    pub fn transition(&self, mut index: usize) -> Option<&Transition<F>> {
        for ep in &self.episodes {
            if index < ep.len() {
                return ep.transitions().get(index);
            }
            index -= ep.len();
        }
        None
    }

    /// `n` transitions drawn uniformly (with replacement) over everything stored.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition<F>> {
        if self.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| {
                let i = rng.gen_range(0..self.total_transitions);
                self.transition(i).expect("index within stored transitions")
            })
            .collect()
    }

    pub fn snapshot(&self) -> BufferSnapshot<F> {
        BufferSnapshot {
            max_transitions: self.max_transitions,
            percentile: self.percentile,
            window: self.window.clone(),
            episodes: self.episodes.iter().cloned().collect(),
            last_threshold: self.last_threshold,
        }
    }

    pub fn restore(snapshot: BufferSnapshot<F>) -> Result<Self> {
        let total: usize = snapshot.episodes.iter().map(Episode::len).sum();
        if total > snapshot.max_transitions {
            return Err(Error::Checkpoint {
                field: "buffer.episodes".into(),
                detail: format!("{total} transitions exceed capacity {}", snapshot.max_transitions),
            });
        }
        let episodes: VecDeque<_> = snapshot.episodes.into();
        let lookup = Self::build_lookup(episodes.iter());
        Ok(GoodEpisodeBuffer {
            episodes,
            total_transitions: total,
            max_transitions: snapshot.max_transitions,
            percentile: snapshot.percentile,
            window: snapshot.window,
            lookup,
            last_threshold: snapshot.last_threshold,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(key: u64, action: usize, reward: f64, lp: f64) -> Transition<f64> {
        Transition {
            state: vec![key as f64],
            state_key: key,
            action,
            reward,
            behavior_log_prob: lp,
        }
    }

    fn ep(id: u64, ret: f64, len: usize) -> Episode<f64> {
        let mut ts: Vec<_> = (0..len).map(|i| tr(id * 100 + i as u64, 0, 0.0, -0.5)).collect();
        if let Some(last) = ts.last_mut() {
            last.reward = ret;
        }
        Episode::new(id, ts, true).unwrap()
    }

    #[test]
    fn percentile_linear_interpolation() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 75.0), 3.25);
        assert_eq!(percentile(&[4.0, 1.0, 3.0, 2.0], 0.0), 1.0);
        assert_eq!(percentile(&[4.0, 1.0, 3.0, 2.0], 100.0), 4.0);
        assert_eq!(percentile(&[7.0], 75.0), 7.0);
        assert_eq!(percentile::<f64>(&[], 75.0), f64::NEG_INFINITY);
    }

    #[test]
    fn admission_against_window() {
        let mut b = GoodEpisodeBuffer::new(100, 75.0, 100);
        for r in [1.0, 2.0, 3.0, 4.0] {
            b.window.push(r);
        }
        let d = b.clone().record_episode(ep(1, 4.0, 1));
        assert_eq!(d.threshold, 3.25);
        assert_eq!(d.outcome, Admission::Admitted);
        let d = b.clone().record_episode(ep(2, 3.0, 1));
        assert_eq!(d.outcome, Admission::Rejected);
    }

    #[test]
    fn first_episode_admitted_against_empty_window() {
        let mut b = GoodEpisodeBuffer::new(10, 75.0, 5);
        let d = b.record_episode(ep(0, -100.0, 3));
        assert_eq!(d.threshold, f64::NEG_INFINITY);
        assert_eq!(d.outcome, Admission::Admitted);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn return_equal_to_threshold_rejected() {
        let mut b = GoodEpisodeBuffer::new(10, 50.0, 5);
        b.record_episode(ep(0, 2.0, 1));
        let d = b.record_episode(ep(1, 2.0, 1));
        assert_eq!(d.threshold, 2.0);
        assert_eq!(d.outcome, Admission::Rejected);
        // The rejected return still entered the window.
        assert_eq!(b.window().len(), 2);
    }

    #[test]
    fn fifo_eviction_by_whole_episodes() {
        let mut b = GoodEpisodeBuffer::new(5, 0.0, 10);
        b.record_episode(ep(0, 1.0, 2));
        b.record_episode(ep(1, 2.0, 2));
        let d = b.record_episode(ep(2, 3.0, 3));
        assert_eq!(d.outcome, Admission::Admitted);
        assert_eq!(d.evicted, vec![0]);
        assert_eq!(b.episode_ids(), vec![1, 2]);
        assert_eq!(b.len(), 5);
        assert!(b.lookup_consistent());
    }

    #[test]
    fn oversize_episode_signalled() {
        let mut b = GoodEpisodeBuffer::new(3, 0.0, 10);
        b.record_episode(ep(0, 1.0, 2));
        let d = b.record_episode(ep(1, 5.0, 4));
        assert_eq!(d.outcome, Admission::Oversize);
        assert_eq!(b.episode_ids(), vec![0]);
        // Exactly at capacity is fine and evicts everything else.
        let d = b.record_episode(ep(2, 9.0, 3));
        assert_eq!(d.outcome, Admission::Admitted);
        assert_eq!(b.episode_ids(), vec![2]);
    }

    #[test]
    fn lookup_most_recent_wins() {
        let mut b = GoodEpisodeBuffer::new(100, 0.0, 10);
        assert_eq!(b.lookup_good_log_prob(7, 1), None);
        b.record_episode(Episode::new(0, vec![tr(7, 1, 1.0, -0.2)], true).unwrap());
        assert_eq!(b.lookup_good_log_prob(7, 1), Some(-0.2));
        assert_eq!(b.lookup_good_log_prob(7, 0), None);
        b.record_episode(Episode::new(1, vec![tr(7, 1, 2.0, -0.1)], true).unwrap());
        assert_eq!(b.lookup_good_log_prob(7, 1), Some(-0.1));
    }

    #[test]
    fn eviction_falls_back_to_older_surviving_match() {
        let mut b = GoodEpisodeBuffer::new(2, 0.0, 10);
        b.record_episode(Episode::new(0, vec![tr(1, 0, 1.0, -0.3)], true).unwrap());
        b.record_episode(Episode::new(1, vec![tr(1, 0, 2.0, -0.2)], true).unwrap());
        b.record_episode(Episode::new(2, vec![tr(9, 0, 3.0, -0.9)], true).unwrap());
        assert_eq!(b.episode_ids(), vec![1, 2]);
        assert_eq!(b.lookup_good_log_prob(1, 0), Some(-0.2));
        assert!(b.lookup_consistent());
    }

    #[test]
    fn positive_behavior_log_prob_rejected() {
        assert!(Episode::new(0, vec![tr(0, 0, 0.0, 0.1)], true).is_err());
    }

    #[test]
    fn sampling_is_uniform_over_transitions() {
        let mut b = GoodEpisodeBuffer::new(10, 0.0, 10);
        b.record_episode(ep(0, 1.0, 1));
        b.record_episode(ep(1, 2.0, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws = b.sample_uniform(40_000, &mut rng);
        let first = draws.iter().filter(|t| t.state_key == 0).count() as f64 / 40_000.0;
        assert!((first - 0.25).abs() < 0.01, "{first}");
        assert!(GoodEpisodeBuffer::<f64>::new(5, 50.0, 5)
            .sample_uniform(3, &mut rng)
            .is_empty());
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut b = GoodEpisodeBuffer::new(6, 50.0, 4);
        for i in 0..6 {
            b.record_episode(ep(i, i as f64, 2));
        }
        let r = GoodEpisodeBuffer::restore(b.snapshot()).unwrap();
        assert_eq!(r.episode_ids(), b.episode_ids());
        assert_eq!(r.threshold(), b.threshold());
        assert!(r.lookup_consistent());
        assert_eq!(r.lookup, b.lookup);
    }
}
