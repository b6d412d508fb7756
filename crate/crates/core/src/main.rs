use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use oprlab::envs::REGISTRY;
use oprlab::harness::{
    export_plot_data, resume_experiment, run_comparison, run_experiment, ExperimentConfig,
};
use oprlab::Result;

#[derive(Parser)]
#[command(name = "oprlab", version, about = "PPO with good-episode replay and log-ratio reward shaping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint directory instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run PPO and PPO+OPR for each seed and summarize.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-metric CSV tables from a metrics file.
    Export {
        #[arg(long)]
        metrics: PathBuf,
        /// Defaults to `plots/` next to the metrics file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the bundled environments.
    ListEnvs,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            resume,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let outcome = match resume {
                Some(ckpt) => resume_experiment(&ckpt, &out)?,
                None => run_experiment(&cfg, seed.unwrap_or(cfg.seed), &out)?,
            };
            if let Some(last) = outcome.records.last() {
                println!(
                    "updates {}  env_steps {}  last mean return {}  entropy {:.4}",
                    last.update_index + 1,
                    last.env_steps,
                    fmt_opt(last.mean_return),
                    last.mean_entropy
                );
            }
            println!("output in {}", outcome.output_dir.display());
        }
        Command::Compare { config, seeds, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seeds = seeds.unwrap_or_else(|| cfg.seeds.clone());
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let s = run_comparison(&cfg, &seeds, &out)?;
            println!("seed  variant  final_return  auc  steps_to_threshold");
            for r in &s.rows {
                println!(
                    "{:>4}  {:<7}  {:>12}  {:>8}  {}",
                    r.seed,
                    r.variant,
                    fmt_opt(r.final_return),
                    fmt_opt(r.auc),
                    r.steps_to_threshold.map_or("-".into(), |x| x.to_string())
                );
            }
            for v in [&s.baseline, &s.opr] {
                if let Some(f) = v.final_return {
                    println!(
                        "{}: median final return {:.4} (IQR {:.4}), reached threshold {}/{}",
                        v.variant,
                        f.median,
                        f.iqr(),
                        v.reached_threshold,
                        v.runs
                    );
                }
            }
            println!("output in {}", out.display());
        }
        Command::Export { metrics, out } => {
            let out = out.unwrap_or_else(|| {
                metrics.parent().map_or_else(|| PathBuf::from("plots"), |p| p.join("plots"))
            });
            let files = export_plot_data(&metrics, &out)?;
            println!("wrote {} tables to {}", files.len(), out.display());
        }
        Command::ListEnvs => {
            for (name, about) in REGISTRY {
                println!("{name:<16} {about}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
