use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::MetricsRecord;
use super::run::run_experiment;
use crate::error::{Error, Result};
use crate::opr::percentile;

pub const ROWS_FILE: &str = "comparison.csv";
pub const SUMMARY_FILE: &str = "comparison_summary.json";

/// Headline numbers of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub variant: String,
    /// Episode-weighted mean return over the final window of the run.
    pub final_return: Option<f64>,
    /// Mean of the per-update mean returns (area under the learning curve per step).
    pub auc: Option<f64>,
    /// First `env_steps` at which some episode reached the success return.
    pub steps_to_threshold: Option<u64>,
    pub final_entropy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Spread> {
        if values.is_empty() {
            return None;
        }
        Some(Spread {
            median: percentile(values, 50.0),
            q25: percentile(values, 25.0),
            q75: percentile(values, 75.0),
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q75 - self.q25
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub final_return: Option<Spread>,
    pub auc: Option<Spread>,
    pub reached_threshold: usize,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub rows: Vec<RunSummary>,
    pub baseline: VariantSummary,
    pub opr: VariantSummary,
    /// Per-seed `opr - baseline` final-return differences.
    pub paired_final_difference: Option<Spread>,
}

pub fn summarize_run(seed: u64, variant: &str, records: &[MetricsRecord], cfg: &ExperimentConfig) -> RunSummary {
    let last_steps = records.last().map_or(0, |r| r.env_steps);
    let cutoff = last_steps as f64 * (1.0 - cfg.final_window_fraction);
    let (mut sum, mut n) = (0.0, 0u64);
    for r in records.iter().filter(|r| r.env_steps as f64 > cutoff) {
        if let Some(m) = r.mean_return {
            sum += m * r.episodes as f64;
            n += r.episodes;
        }
    }
    let curve: Vec<f64> = records.iter().filter_map(|r| r.mean_return).collect();
    let threshold = cfg.success_threshold();
    RunSummary {
        seed,
        variant: variant.to_string(),
        final_return: (n > 0).then(|| sum / n as f64),
        auc: (!curve.is_empty()).then(|| curve.iter().sum::<f64>() / curve.len() as f64),
        steps_to_threshold: threshold.and_then(|t| {
            records
                .iter()
                .find(|r| r.max_return.is_some_and(|m| m >= t - 1e-9))
                .map(|r| r.env_steps)
        }),
        final_entropy: records.last().map(|r| r.mean_entropy),
    }
}

fn variant_summary(variant: &str, rows: &[&RunSummary]) -> VariantSummary {
    let finals: Vec<f64> = rows.iter().filter_map(|r| r.final_return).collect();
    let aucs: Vec<f64> = rows.iter().filter_map(|r| r.auc).collect();
    VariantSummary {
        variant: variant.to_string(),
        final_return: Spread::of(&finals),
        auc: Spread::of(&aucs),
        reached_threshold: rows.iter().filter(|r| r.steps_to_threshold.is_some()).count(),
        runs: rows.len(),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Runs the baseline (`opr_enabled = false`) and OPR for every seed on the same config.
///
/// Results land in `out_dir/seed_<s>/<variant>/`. Summary rows are appended to
/// `comparison.csv` as each run finishes, so a failure aborts the comparison but keeps
/// what completed.
pub fn run_comparison(config: &ExperimentConfig, seeds: &[u64], out_dir: &Path) -> Result<ComparisonSummary> {
    config.validate()?;
    if seeds.len() < 2 {
        return Err(Error::Config("a comparison needs at least two seeds".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let rows_path = out_dir.join(ROWS_FILE);
    let mut csv = std::fs::File::create(&rows_path).map_err(|e| Error::io(&rows_path, e))?;
    writeln!(csv, "seed,variant,final_return,auc,steps_to_threshold,final_entropy")
        .map_err(|e| Error::io(&rows_path, e))?;

    let mut rows = Vec::with_capacity(seeds.len() * 2);
    for &seed in seeds {
        for (variant, enabled) in [("ppo", false), ("opr", true)] {
            let cfg = ExperimentConfig {
                opr_enabled: enabled,
                ..config.clone()
            };
            let dir = out_dir.join(format!("seed_{seed}")).join(variant);
            let outcome = run_experiment(&cfg, seed, &dir)?;
            let row = summarize_run(seed, variant, &outcome.records, &cfg);
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                row.seed,
                row.variant,
                opt(row.final_return),
                opt(row.auc),
                opt(row.steps_to_threshold),
                opt(row.final_entropy)
            )
            .and_then(|_| csv.flush())
            .map_err(|e| Error::io(&rows_path, e))?;
            rows.push(row);
        }
    }

    let pick = |v: &str| rows.iter().filter(|r| r.variant == v).collect::<Vec<_>>();
    let diffs: Vec<f64> = seeds
        .iter()
        .filter_map(|&s| {
            let f = |v: &str| rows.iter().find(|r| r.seed == s && r.variant == v)?.final_return;
            Some(f("opr")? - f("ppo")?)
        })
        .collect();
    let summary = ComparisonSummary {
        baseline: variant_summary("ppo", &pick("ppo")),
        opr: variant_summary("opr", &pick("opr")),
        paired_final_difference: Spread::of(&diffs),
        rows,
    };
    let path = out_dir.join(SUMMARY_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&summary).expect("summary serializes"))
        .map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}
