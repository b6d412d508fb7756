use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::ExperimentConfig;
use super::metrics::MetricsRecord;
use crate::agent::{AgentOptimizer, AgentParams};
use crate::envs::{Env, Environment, StepResult};
use crate::error::{Error, Result};
use crate::opr::{shape_rollout, BufferReplay, BufferSnapshot, Episode, GoodEpisodeBuffer, Transition};
use crate::opr::replay_advantages;
use crate::ppo::{compute_gae, ppo_update, AugmentConfig, Augmentation, RolloutBatch, StepRecord};
use crate::seeding::{derive_seed, rng_for, Stream};

const STATE_VERSION: u32 = 1;

/// One environment copy and its in-progress episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Worker {
    env: Env,
    current: StepResult,
    episode: Vec<Transition<f64>>,
    /// Episodes begun on this worker; indexes the reset seed.
    episodes_started: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainerState {
    version: u32,
    config: ExperimentConfig,
    seed: u64,
    update_index: u64,
    env_steps: u64,
    next_episode_id: u64,
    completed_episode_steps: u64,
    workers: Vec<Worker>,
    buffer: BufferSnapshot<f64>,
}

/// PPO (optionally with OPR) on a fixed set of environment copies.
///
/// Each update collects `steps_per_update / num_parallel_envs` steps from every copy in
/// worker order, feeds finished episodes to the good-episode buffer, shapes rewards, and
/// runs one PPO update. Every random draw comes from a stream keyed on the master seed and
/// the update/worker/episode index, so a run is a pure function of config and seed.
pub struct Trainer {
    config: ExperimentConfig,
    seed: u64,
    agent: AgentParams<f64>,
    optimizer: AgentOptimizer<f64>,
    buffer: GoodEpisodeBuffer<f64>,
    workers: Vec<Worker>,
    update_index: u64,
    env_steps: u64,
    next_episode_id: u64,
    completed_episode_steps: u64,
}

fn reset_seed(seed: u64, worker: usize, episode: u64) -> u64 {
    derive_seed(seed, Stream::EpisodeReset, &[worker as u64, episode])
}

impl Trainer {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = config.env_params();
        let mut workers = Vec::with_capacity(config.num_parallel_envs);
        for w in 0..config.num_parallel_envs {
            let mut env = Env::from_params(&params)?;
            let current = env.reset(reset_seed(seed, w, 0));
            workers.push(Worker {
                env,
                current,
                episode: Vec::new(),
                episodes_started: 1,
            });
        }
        let spec = workers[0].env.spec();
        let agent = AgentParams::new(
            spec.observation_dim,
            spec.action_count,
            &config.agent(),
            &mut rng_for(seed, Stream::Init, &[]),
        )?;
        let optimizer =
            AgentOptimizer::new(&agent, config.adam_beta1, config.adam_beta2, config.adam_epsilon);
        let opr = config.opr();
        Ok(Trainer {
            config: config.clone(),
            seed,
            agent,
            optimizer,
            buffer: GoodEpisodeBuffer::new(opr.buffer_capacity, opr.percentile, opr.window),
            workers,
            update_index: 0,
            env_steps: 0,
            next_episode_id: 0,
            completed_episode_steps: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn agent(&self) -> &AgentParams<f64> {
        &self.agent
    }

    pub fn buffer(&self) -> &GoodEpisodeBuffer<f64> {
        &self.buffer
    }

    pub fn update_index(&self) -> u64 {
        self.update_index
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Steps belonging to finished episodes plus those of episodes still running.
    pub fn accounted_steps(&self) -> u64 {
        self.completed_episode_steps + self.workers.iter().map(|w| w.episode.len() as u64).sum::<u64>()
    }

    pub fn finished(&self) -> bool {
        self.env_steps >= self.config.total_steps
    }

    pub fn learning_rate(&self) -> f64 {
        let lr = self.config.learning_rate;
        if !self.config.lr_linear_decay {
            return lr;
        }
        let n = self.config.num_updates().max(1) as f64;
        lr * (1.0 - self.update_index as f64 / n).max(0.0)
    }

    /// Collects one rollout and applies one update.
    pub fn step_update(&mut self) -> Result<MetricsRecord> {
        let per_worker = self.config.steps_per_update / self.config.num_parallel_envs;
        let mut segments = Vec::with_capacity(self.workers.len());
        let mut finished: Vec<Episode<f64>> = Vec::new();
        let mut entropy_sum = 0.0;

        for (w, worker) in self.workers.iter_mut().enumerate() {
            let mut rng = rng_for(self.seed, Stream::Act, &[self.update_index, w as u64]);
            let mut seg = RolloutBatch::new();
            for _ in 0..per_worker {
                let obs = &worker.current.observation;
                let d = self.agent.act(obs, &mut rng)?;
                entropy_sum += d.entropy;
                let res = worker.env.step(d.action)?;
                let truncated = res.truncated && !res.terminated;
                let truncation_value = if truncated { self.agent.value(&res.observation)? } else { 0.0 };
                worker.episode.push(Transition {
                    state: obs.clone(),
                    state_key: worker.current.state_key,
                    action: d.action,
                    reward: res.reward,
                    behavior_log_prob: d.log_prob,
                });
                seg.push(StepRecord {
                    state: obs.clone(),
                    state_key: worker.current.state_key,
                    action: d.action,
                    reward: res.reward,
                    log_prob: d.log_prob,
                    value: d.value,
                    terminated: res.terminated,
                    truncated,
                    truncation_value,
                });
                if res.done() {
                    let transitions = std::mem::take(&mut worker.episode);
                    self.completed_episode_steps += transitions.len() as u64;
                    finished.push(Episode::new(self.next_episode_id, transitions, res.terminated)?);
                    self.next_episode_id += 1;
                    worker.current = worker.env.reset(reset_seed(self.seed, w, worker.episodes_started));
                    worker.episodes_started += 1;
                } else {
                    worker.current = res;
                }
            }
            let last_done = seg.dones.last().copied().unwrap_or(true);
            seg.bootstrap_value = if last_done { 0.0 } else { self.agent.value(&worker.current.observation)? };
            segments.push(seg);
        }
        self.env_steps += (per_worker * self.workers.len()) as u64;

        let episodes = finished.len() as u64;
        let episodes_terminated = finished.iter().filter(|e| e.terminated()).count() as u64;
        let returns: Vec<f64> = finished.iter().map(|e| e.episodic_return()).collect();
        let mut admitted = 0;
        for ep in finished {
            if self.buffer.record_episode(ep).outcome == crate::opr::Admission::Admitted {
                admitted += 1;
            }
        }

        let opr = self.config.effective_opr();
        let ppo = self.config.ppo();
        let (mut matches, mut abs_sum, mut total) = (0u64, 0.0, 0usize);
        for seg in &mut segments {
            let s = shape_rollout(seg, &self.buffer, &opr);
            matches += s.matched as u64;
            abs_sum += s.mean_abs_bounded_delta * s.transitions as f64;
            total += s.transitions;
            compute_gae(seg, &ppo)?;
        }
        let batch = RolloutBatch::concat(&segments)?;

        let bc_now = opr.bc_enabled
            && opr.lambda_bc > 0.0
            && self.update_index.is_multiple_of(opr.update_interval as u64);
        let use_aux = (bc_now || opr.buffer_in_surrogate) && !self.buffer.is_empty();
        let lr = self.learning_rate();
        let mut shuffle = rng_for(self.seed, Stream::Shuffle, &[self.update_index]);
        let stats = if use_aux {
            let rng = rng_for(self.seed, Stream::BcSample, &[self.update_index]);
            let mut replay = BufferReplay::new(&self.buffer, rng);
            if opr.buffer_in_surrogate {
                let adv = replay_advantages(&self.buffer, &self.agent, &ppo, &opr)?;
                replay = replay.with_advantages(adv)?;
            }
            let aux = Augmentation {
                source: &mut replay,
                config: AugmentConfig {
                    lambda_bc: if bc_now { opr.lambda_bc } else { 0.0 },
                    bc_epochs: if bc_now { opr.bc_epochs } else { ppo.epochs_per_update },
                    samples_per_minibatch: ppo.minibatch_size,
                    in_surrogate: opr.buffer_in_surrogate,
                },
            };
            ppo_update(&mut self.agent, &mut self.optimizer, &batch, Some(aux), &ppo, lr, &mut shuffle)?
        } else {
            ppo_update(&mut self.agent, &mut self.optimizer, &batch, None, &ppo, lr, &mut shuffle)?
        };

        let n_steps = batch.len().max(1) as f64;
        let record = MetricsRecord {
            update_index: self.update_index,
            env_steps: self.env_steps,
            episodes,
            episodes_terminated,
            mean_return: (!returns.is_empty()).then(|| returns.iter().sum::<f64>() / returns.len() as f64),
            max_return: returns.iter().copied().reduce(f64::max),
            mean_entropy: entropy_sum / n_steps,
            surrogate_loss: stats.surrogate_loss,
            value_loss: stats.value_loss,
            entropy_term: stats.entropy_term,
            bc_loss: stats.bc_loss,
            total_loss: stats.total_loss,
            clip_fraction: stats.clip_fraction,
            grad_norm: stats.grad_norm,
            learning_rate: lr,
            bc_applied: stats.bc_minibatches > 0 && bc_now,
            buffer_transitions: self.buffer.len() as u64,
            buffer_episodes: self.buffer.num_episodes() as u64,
            admitted,
            threshold: self.buffer.last_threshold().filter(|t| t.is_finite()),
            shaping_matches: matches,
            mean_abs_shaping: if total > 0 { abs_sum / total as f64 } else { 0.0 },
        };
        self.update_index += 1;
        Ok(record)
    }

    /// Writes `agent.ckpt` (parameters and optimizer) and `state.json` (everything else)
    /// into `dir`, which is created if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_checkpoint(&dir.join("agent.ckpt"), &self.agent, &self.optimizer)?;
        let state = TrainerState {
            version: STATE_VERSION,
            config: self.config.clone(),
            seed: self.seed,
            update_index: self.update_index,
            env_steps: self.env_steps,
            next_episode_id: self.next_episode_id,
            completed_episode_steps: self.completed_episode_steps,
            workers: self.workers.clone(),
            buffer: self.buffer.snapshot(),
        };
        let path = dir.join("state.json");
        let text = serde_json::to_string(&state).expect("state serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (agent, optimizer) = load_checkpoint(&dir.join("agent.ckpt"))?;
        let path = dir.join("state.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let state: TrainerState = serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
            field: "state.json".into(),
            detail: e.to_string(),
        })?;
        if state.version != STATE_VERSION {
            return Err(Error::Checkpoint {
                field: "state.json.version".into(),
                detail: format!("unsupported version {}", state.version),
            });
        }
        state.config.validate()?;
        let spec = state.workers.first().map(|w| w.env.spec()).ok_or_else(|| Error::Checkpoint {
            field: "state.json.workers".into(),
            detail: "no workers".into(),
        })?;
        if agent.observation_dim() != spec.observation_dim || agent.action_count() != spec.action_count {
            return Err(Error::Checkpoint {
                field: "agent".into(),
                detail: "network shape does not match the environment".into(),
            });
        }
        let buffer = GoodEpisodeBuffer::restore(state.buffer).map_err(|e| Error::Checkpoint {
            field: "state.json.buffer".into(),
            detail: e.to_string(),
        })?;
        Ok(Trainer {
            config: state.config,
            seed: state.seed,
            agent,
            optimizer,
            buffer,
            workers: state.workers,
            update_index: state.update_index,
            env_steps: state.env_steps,
            next_episode_id: state.next_episode_id,
            completed_episode_steps: state.completed_episode_steps,
        })
    }
}
