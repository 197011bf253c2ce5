//! Runs experiment plans and writes learning curves and summaries.

use std::path::PathBuf;

use alkgp::harness::{self, ExperimentPlan};
use anyhow::Context;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(about = "Seeded multi-realization active learning benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every config × realization of a plan.
    Run {
        #[arg(long)]
        plan: PathBuf,
        /// Output directory for metrics.csv, bands.csv, realizations.csv and summary.json.
        #[arg(long)]
        out: PathBuf,
        /// Use the plan's `paper_realizations` instead of `realizations`.
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Parse and validate a plan without running it.
    Check {
        #[arg(long)]
        plan: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run {
            plan,
            out,
            paper_scale,
            workers,
        } => {
            let mut plan = ExperimentPlan::load(&plan).with_context(|| format!("loading {}", plan.display()))?;
            if paper_scale {
                plan.realizations = plan.paper_realizations;
            }
            let workers = workers
                .or(plan.workers)
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            log::info!(
                "{}: {} configs × {} realizations on {workers} workers",
                plan.name,
                plan.configs.len(),
                plan.realizations
            );
            let progress = |id: &str, k: usize, done: usize, total: usize| {
                log::info!("[{done}/{total}] {id} realization {k}");
            };
            let result = harness::run_plan(&plan, workers, Some(&progress))?;
            let summary = harness::write_outputs(&result, &out)?;
            for c in &summary.configs {
                println!(
                    "{:<16} {:>3} ok {:>3} failed  median AUC-SMSE {:>10}  median time {:>8}",
                    c.config,
                    c.completed,
                    c.failed,
                    c.median_auc_smse.map_or("-".into(), |v| format!("{v:.4}")),
                    c.median_total_secs.map_or("-".into(), |v| format!("{v:.1}s")),
                );
            }
        }
        Command::Check { plan } => {
            let p = ExperimentPlan::load(&plan)?;
            let data = harness::load_data(&p.dataset, p.standardize)?;
            p.validate(data.features.rows())?;
            println!("{}: {} configs, {} rows, {} features", p.name, p.configs.len(), data.features.rows(), data.features.cols());
        }
    }
    Ok(())
}
