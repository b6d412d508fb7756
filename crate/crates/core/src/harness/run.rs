use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::metrics::{MetricsRecord, MetricsWriter};
use super::trainer::Trainer;
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const CONFIG_ECHO_FILE: &str = "config.toml";
pub const FAILURE_FILE: &str = "failure.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<MetricsRecord>,
    pub output_dir: PathBuf,
    /// Directory of the final resumable checkpoint.
    pub final_checkpoint: PathBuf,
}

#[derive(Serialize)]
struct Timing {
    update_index: u64,
    seconds: f64,
}

#[derive(Serialize)]
struct Failure<'a> {
    update_index: u64,
    env_steps: u64,
    error: &'a str,
}

/// Trains from scratch with `seed`, writing into `out_dir`:
/// `config.toml` (echo), `metrics.jsonl`, `timing.jsonl` (wall clock, kept apart so the
/// metrics stay reproducible), and `checkpoints/`.
pub fn run_experiment(config: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<RunOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut echo = config.clone();
    echo.seed = seed;
    let echo_path = out_dir.join(CONFIG_ECHO_FILE);
    std::fs::write(&echo_path, echo.to_toml_string()).map_err(|e| Error::io(&echo_path, e))?;
    let metrics = MetricsWriter::create(&out_dir.join(METRICS_FILE))?;
    let timing = MetricsWriter::create(&out_dir.join(TIMING_FILE))?;
    let trainer = Trainer::new(config, seed)?;
    drive(trainer, out_dir, metrics, timing)
}

/// Continues a run from a checkpoint directory written by [`Trainer::save`], appending to
/// the metrics in `out_dir`.
pub fn resume_experiment(checkpoint: &Path, out_dir: &Path) -> Result<RunOutcome> {
    let trainer = Trainer::load(checkpoint)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics = MetricsWriter::append(&out_dir.join(METRICS_FILE))?;
    let timing = MetricsWriter::append(&out_dir.join(TIMING_FILE))?;
    drive(trainer, out_dir, metrics, timing)
}

fn drive(
    mut trainer: Trainer,
    out_dir: &Path,
    mut metrics: MetricsWriter,
    mut timing: MetricsWriter,
) -> Result<RunOutcome> {
    let cfg = trainer.config().clone();
    let ckpt_root = out_dir.join(CHECKPOINT_DIR);
    let mut records = Vec::new();
    let mut episodes: u64 = 0;
    while !trainer.finished() && (cfg.max_episodes == 0 || episodes < cfg.max_episodes) {
        let started = Instant::now();
        let rec = match trainer.step_update() {
            Ok(r) => r,
            Err(e) => {
                let path = out_dir.join(FAILURE_FILE);
                let msg = e.to_string();
                let f = Failure {
                    update_index: trainer.update_index(),
                    env_steps: trainer.env_steps(),
                    error: &msg,
                };
                let _ = std::fs::write(&path, serde_json::to_string_pretty(&f).unwrap_or_default());
                return Err(e);
            }
        };
        episodes += rec.episodes;
        metrics.write(&rec)?;
        timing.write(&Timing {
            update_index: rec.update_index,
            seconds: started.elapsed().as_secs_f64(),
        })?;
        records.push(rec);
        let done = trainer.update_index();
        if cfg.checkpoint_interval > 0 && done.is_multiple_of(cfg.checkpoint_interval) {
            trainer.save(&ckpt_root.join(format!("update_{done:06}")))?;
        }
    }
    let final_checkpoint = ckpt_root.join("final");
    trainer.save(&final_checkpoint)?;
    Ok(RunOutcome {
        records,
        output_dir: out_dir.to_path_buf(),
        final_checkpoint,
    })
}
