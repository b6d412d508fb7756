//! Independent oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oprlab::agent::{AgentConfig, AgentParams};
use oprlab::opr::{Admission, Episode, GoodEpisodeBuffer, Transition};
use oprlab::ppo::{gae, minibatch_loss_and_grad, Minibatch, PpoConfig, ReplaySample};

/// Worst elementwise violation `|g - fd| / (1e-4 * max(|g|, |fd|) + 1e-8)` of the total-loss
/// gradient against central differences; a value `<= 1` passes.
pub fn total_loss_gradient_case(case: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(case);
    let (obs, actions) = (3, 3);
    let cfg = AgentConfig {
        hidden_sizes: vec![5],
        shared_trunk: case % 2 == 1,
        policy_output_scale: 1.0,
        ..AgentConfig::default()
    };
    let params = AgentParams::new(obs, actions, &cfg, &mut rng).unwrap();
    let n = 4;
    let states: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..obs).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let acts: Vec<usize> = (0..n).map(|_| rng.gen_range(0..actions)).collect();
    let current = params.evaluate(&states, &acts).unwrap().log_probs;
    let old: Vec<f64> = current.iter().map(|lp| lp + rng.gen_range(-0.2..0.2)).collect();
    let in_surrogate = case % 3 == 0;
    let replay: Vec<ReplaySample<f64>> = (0..3)
        .map(|_| ReplaySample {
            state: (0..obs).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: rng.gen_range(0..actions),
            behavior_log_prob: -rng.gen_range(0.2..2.0),
            advantage: in_surrogate.then(|| rng.gen_range(-1.0..1.0)),
        })
        .collect();
    let lambda_bc = rng.gen_range(0.0..2.0);
    let mb = Minibatch {
        states: states.iter().map(|s| s.as_slice()).collect(),
        actions: acts,
        old_log_probs: old,
        advantages: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        return_targets: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    };
    let ppo = PpoConfig {
        entropy_coef: 0.05,
        value_coef: 0.5,
        ..PpoConfig::default()
    };
    let loss = |p: &AgentParams<f64>| {
        minibatch_loss_and_grad(p, &mb, &replay, lambda_bc, in_surrogate, &ppo)
            .unwrap()
            .0
            .optimized
    };
    let (_, grads) = minibatch_loss_and_grad(&params, &mb, &replay, lambda_bc, in_surrogate, &ppo).unwrap();
    let g = grads.to_flat();
    let theta = params.to_flat();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + h;
        probe.set_flat(&t).unwrap();
        let up = loss(&probe);
        t[i] = theta[i] - h;
        probe.set_flat(&t).unwrap();
        let down = loss(&probe);
        let fd = (up - down) / (2.0 * h);
        let scale = 1e-4 * g[i].abs().max(fd.abs()) + 1e-8;
        worst = worst.max((g[i] - fd).abs() / scale);
    }
    worst
}

/// GAE by definition: the lambda-weighted mix of n-step returns, truncated at episode ends.
pub fn lambda_return_advantages(
    rewards: &[f64],
    values: &[f64],
    terminal: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let t_len = rewards.len();
    (0..t_len)
        .map(|t| {
            // Steps until the stream ends: at a terminal (inclusive) or the batch end.
            let end = (t..t_len).find(|&k| terminal[k]).map_or(t_len, |k| k + 1);
            let tail_value = if end == t_len && !terminal[t_len - 1] { bootstrap } else { 0.0 };
            let horizon = end - t;
            let n_step = |n: usize| {
                let mut g = 0.0;
                for k in 0..n {
                    g += gamma.powi(k as i32) * rewards[t + k];
                }
                let next = if t + n < end { values[t + n] } else { tail_value };
                g + gamma.powi(n as i32) * next
            };
            let mut target = 0.0;
            for n in 1..horizon {
                target += (1.0 - lambda) * lambda.powi(n as i32 - 1) * n_step(n);
            }
            target += lambda.powi(horizon as i32 - 1) * n_step(horizon);
            target - values[t]
        })
        .collect()
}

/// Runs every reward sequence over {-1, 0, 1} of length 1..=max_len, each with and
/// without a terminal pattern, against the brute-force oracle. Returns (cases, worst error).
pub fn gae_exhaustive(max_len: usize) -> (usize, f64) {
    let gamma = 0.9;
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    for len in 1..=max_len {
        let values: Vec<f64> = (0..len).map(|i| 0.3 * (i as f64 + 1.0).sin()).collect();
        for code in 0..3usize.pow(len as u32) {
            let mut c = code;
            let rewards: Vec<f64> = (0..len)
                .map(|_| {
                    let r = (c % 3) as f64 - 1.0;
                    c /= 3;
                    r
                })
                .collect();
            // No terminals, a terminal at the end, and a terminal mid-stream (from the code).
            let mid = code % len;
            let patterns = [vec![false; len], (0..len).map(|k| k == len - 1).collect(), (0..len).map(|k| k == mid).collect::<Vec<_>>()];
            for terminal in &patterns {
                for lambda in [0.0, 0.95, 1.0] {
                    let got = gae(&rewards, &values, terminal, &vec![false; len], &vec![0.0; len], 0.7, gamma, lambda);
                    let want = lambda_return_advantages(&rewards, &values, terminal, 0.7, gamma, lambda);
                    for (a, b) in got.iter().zip(&want) {
                        worst = worst.max((a - b).abs());
                    }
                    cases += 1;
                }
            }
        }
    }
    (cases, worst)
}

fn oracle_percentile(window: &[f64], p: f64) -> f64 {
    if window.is_empty() {
        return f64::NEG_INFINITY;
    }
    let mut v = window.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() as f64 - 1.0);
    let i = pos as usize;
    if i + 1 >= v.len() {
        v[v.len() - 1]
    } else {
        v[i] * (1.0 - (pos - i as f64)) + v[i + 1] * (pos - i as f64)
    }
}

/// Drives one random admission sequence against a plain list model of the buffer and
/// checks the invariants after every mutation.
pub fn buffer_sequence(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = rng.gen_range(1..=30);
    let p = [0.0, 25.0, 50.0, 75.0, 90.0, 100.0][rng.gen_range(0..6)];
    let k = rng.gen_range(1..=12);
    let mut buf = GoodEpisodeBuffer::new(cap, p, k);
    let mut window: Vec<f64> = Vec::new();
    let mut model: Vec<(u64, Vec<Transition<f64>>)> = Vec::new();
    let steps = rng.gen_range(1..=40);
    for id in 0..steps {
        let len = rng.gen_range(1..=cap + 3);
        let ts: Vec<Transition<f64>> = (0..len)
            .map(|_| Transition {
                state: vec![],
                state_key: rng.gen_range(0..6),
                action: rng.gen_range(0..3),
                reward: rng.gen_range(-2..=2) as f64,
                behavior_log_prob: -rng.gen_range(0.0..3.0),
            })
            .collect();
        let ret: f64 = ts.iter().map(|t| t.reward).sum();
        let tau = oracle_percentile(&window, p);
        window.push(ret);
        if window.len() > k {
            window.remove(0);
        }
        let decision = buf.record_episode(Episode::new(id, ts.clone(), true).map_err(|e| e.to_string())?);
        let expect_admit = ret > tau && len <= cap;
        if (decision.outcome == Admission::Admitted) != expect_admit {
            return Err(format!("seed {seed} ep {id}: R={ret} tau={tau} got {:?}", decision.outcome));
        }
        if ret == tau && decision.outcome == Admission::Admitted {
            return Err(format!("seed {seed}: return equal to threshold admitted"));
        }
        if expect_admit {
            model.push((id, ts));
            while model.iter().map(|(_, t)| t.len()).sum::<usize>() > cap {
                model.remove(0);
            }
        }
        if buf.len() > cap {
            return Err(format!("seed {seed}: {} transitions > capacity {cap}", buf.len()));
        }
        let ids: Vec<u64> = model.iter().map(|(i, _)| *i).collect();
        if buf.episode_ids() != ids {
            return Err(format!("seed {seed}: ids {:?} != model {ids:?}", buf.episode_ids()));
        }
        for key in 0..6 {
            for a in 0..3 {
                let want = model
                    .iter()
                    .flat_map(|(_, ts)| ts.iter())
                    .filter(|t| t.state_key == key && t.action == a)
                    .last()
                    .map(|t| t.behavior_log_prob);
                if buf.lookup_good_log_prob(key, a) != want {
                    return Err(format!("seed {seed}: lookup ({key},{a}) mismatch"));
                }
            }
        }
        if !buf.lookup_consistent() {
            return Err(format!("seed {seed}: lookup table inconsistent"));
        }
    }
    Ok(())
}
