use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dilute_core::harness::{
    evaluate_policy, read_results, run_experiment, summarize, write_results, write_summary,
    ExperimentConfig, MetricsRow, SEED_ENV,
};
use walkdir::WalkDir;

#[derive(Parser)]
#[command(name = "dilute-rl", version, about = "Train and evaluate dialogue policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed, evaluate each checkpoint, write metrics.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. `--set explore.tau=50`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate one checkpoint file with the frozen policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
    },
    /// Collect every metrics.csv below a directory into one CSV plus a summary table.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Summary table path; defaults to `<out stem>_summary.csv`.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            config,
            overrides,
            out,
        } => train(&config, &overrides, &out),
        Command::Eval {
            checkpoint,
            config,
            overrides,
            seed,
        } => {
            let cfg = ExperimentConfig::from_file(&config, &overrides)?;
            let r = evaluate_policy(&checkpoint, &cfg, seed)
                .with_context(|| format!("evaluating {}", checkpoint.display()))?;
            println!(
                "episodes={} success_rate={:.4} avg_reward={:.3} mean_turns={:.2}",
                r.episodes, r.success_rate, r.avg_reward, r.mean_turns
            );
            Ok(())
        }
        Command::Report {
            input,
            out,
            summary,
        } => report(&input, &out, summary),
    }
}

fn train(config: &Path, overrides: &[String], out: &Path) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(config, overrides)?;
    cfg.apply_seed_env()?;
    let rows = run_experiment(&cfg, out).with_context(|| format!("training into {}", out.display()))?;
    for r in &rows {
        println!(
            "{} {} ser={} seed={} checkpoint={} success_rate={:.4} avg_reward={:.3}",
            r.label(),
            r.domain,
            r.ser,
            r.seed,
            r.checkpoint,
            r.success_rate,
            r.avg_reward
        );
    }
    Ok(())
}

fn report(input: &Path, out: &Path, summary: Option<PathBuf>) -> Result<()> {
    let mut files: Vec<PathBuf> = WalkDir::new(input)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.file_name() == "metrics.csv")
        .map(|e| e.into_path())
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no metrics.csv found below {}", input.display());
    }
    let mut rows: Vec<MetricsRow> = Vec::new();
    for f in &files {
        rows.extend(read_results(f).with_context(|| format!("reading {}", f.display()))?);
    }
    write_results(&rows, out)?;
    let summary = summary.unwrap_or_else(|| {
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
        out.with_file_name(format!("{stem}_summary.csv"))
    });
    write_summary(&rows, &summary)?;
    for s in summarize(&rows) {
        let cells: Vec<String> = s
            .cells
            .iter()
            .map(|(label, (succ, rew))| format!("{label} {:.1}% {:.2}", 100.0 * succ, rew))
            .collect();
        println!("{} ser={}: {}", s.domain, s.ser, cells.join(" | "));
    }
    println!("{} rows from {} runs -> {}", rows.len(), files.len(), out.display());
    Ok(())
}
