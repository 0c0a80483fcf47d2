use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use super::{compare, evaluate_policy, load_run_learner, run_experiment, write_comparison, ExperimentConfig};
use crate::algos::Algorithm;
use crate::calibration::{calibrate, DemandModelFile};

#[derive(Debug, Parser)]
#[command(
    name = "marl-pricing",
    version,
    about = "Multi-agent RL benchmark for competitive retail pricing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit constant-elasticity demand models from a transaction CSV.
    FitDemand {
        /// Transaction export (InvoiceNo, StockCode, Quantity, InvoiceDate, UnitPrice, CustomerID, ...).
        csv: PathBuf,
        /// Where to write the demand-model JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate one or more algorithms over several seeds.
    Train {
        /// Experiment config (TOML). Without it the built-in defaults and
        /// bundled demand model are used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Algorithms to run (comma separated): mappo, maddpg, masac, iddpg.
        #[arg(long, value_delimiter = ',', value_parser = parse_algorithm)]
        algo: Vec<Algorithm>,
        /// Seeds as an inclusive range `0..9` or a list `0,3,7`.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Option<Seeds>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Evaluate every this many episodes.
        #[arg(long)]
        eval_interval: Option<usize>,
        /// Output directory for run artifacts.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Runs executed in parallel.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Re-run the evaluation protocol on a finished run's final checkpoint.
    Evaluate {
        /// Run directory (contains manifest.json).
        #[arg(long)]
        run: PathBuf,
        /// Evaluation episodes (defaults to the run's setting).
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Summarise runs per algorithm as a table and JSON report.
    Compare {
        /// Run directories or experiment output directories.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// JSON report path; a .txt table is written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Small end-to-end run (mappo and iddpg, 2 seeds, 50 episodes) on the bundled market.
    Demo {
        #[arg(long, default_value = "demo-runs")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Seeds(Vec<u64>);

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: crate::algos::AlgoError| e.to_string())
}

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let lo: u64 = a.trim().parse().map_err(|_| format!("bad range start '{a}'"))?;
        let hi: u64 = b.trim().parse().map_err(|_| format!("bad range end '{b}'"))?;
        if hi < lo {
            return Err(format!("empty seed range {s}"));
        }
        return Ok(Seeds((lo..=hi).collect()));
    }
    s.split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|_| format!("bad seed '{p}'")))
        .collect::<Result<Vec<_>, _>>()
        .map(Seeds)
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 on success or help, 2 on usage errors, 1 otherwise.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::FitDemand { csv, out } => fit_demand(csv, out),
        Command::Train {
            config,
            algo,
            seeds,
            episodes,
            eval_interval,
            out,
            workers,
        } => {
            let mut cfg = match &config {
                Some(path) => {
                    if !path.is_file() {
                        bail!("config file not found: {}", path.display());
                    }
                    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?
                }
                None => ExperimentConfig::default(),
            };
            if !algo.is_empty() {
                cfg.algorithms = algo;
            }
            if let Some(Seeds(s)) = seeds {
                cfg.seeds = s;
            }
            if let Some(e) = episodes {
                cfg.episodes = e;
            }
            if let Some(k) = eval_interval {
                cfg.eval_interval = k;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            train(&cfg)
        }
        Command::Evaluate { run, episodes } => evaluate(run, episodes),
        Command::Compare { dirs, out } => {
            let comparison = compare(&dirs)?;
            for (dir, reason) in &comparison.excluded {
                eprintln!("excluded {}: {reason}", dir.display());
            }
            print!("{}", comparison.table());
            if let Some(path) = out {
                write_comparison(&comparison, &path)?;
                println!("report written to {}", path.display());
            }
            Ok(())
        }
        Command::Demo { out, workers } => {
            let cfg = ExperimentConfig {
                algorithms: vec![Algorithm::Mappo, Algorithm::Iddpg],
                seeds: vec![0, 1],
                episodes: 50,
                eval_interval: 10,
                output_dir: out,
                workers,
                ..ExperimentConfig::default()
            };
            train(&cfg)
        }
    }
}

fn fit_demand(csv: PathBuf, out: PathBuf) -> Result<()> {
    if !csv.is_file() {
        bail!("transaction file not found: {}", csv.display());
    }
    let summary = calibrate(&csv)?;
    let d = &summary.drops;
    println!(
        "kept {} rows; dropped {} cancelled, {} non-positive quantity, {} non-positive price, {} missing customer",
        summary.kept_rows, d.cancelled, d.non_positive_quantity, d.non_positive_price, d.missing_customer
    );
    for (sku, reason) in &summary.skipped {
        println!("skipped {sku}: {reason}");
    }
    if summary.models.is_empty() {
        bail!("no SKU had enough history to fit");
    }
    for m in &summary.models {
        let q = m.fit_quality.as_ref();
        println!(
            "{:<10} base {:>10.1}  elasticity {:>6.3}  p_ref {:>8.3}  sigma {:>8.1}  r2 {}",
            m.sku,
            m.base_demand,
            m.elasticity,
            m.reference_price,
            m.residual_sigma,
            q.map_or("-".into(), |q| format!("{:.3}", q.r2))
        );
    }
    DemandModelFile { models: summary.models }.save(&out)?;
    println!("demand models written to {}", out.display());
    Ok(())
}

fn train(cfg: &ExperimentConfig) -> Result<()> {
    let runs = run_experiment(cfg)?;
    for r in &runs {
        let last = r.evals.last().map(|e| e.1).unwrap_or(f64::NAN);
        println!(
            "{:<7} seed {:<3} final eval mean profit {:>12.2}  ({})",
            r.algorithm,
            r.seed,
            last,
            r.dir.display()
        );
    }
    let comparison = compare(std::slice::from_ref(&cfg.output_dir))?;
    print!("{}", comparison.table());
    let report = cfg.output_dir.join("compare.json");
    write_comparison(&comparison, &report)?;
    println!("report written to {}", report.display());
    Ok(())
}

fn evaluate(run: PathBuf, episodes: Option<usize>) -> Result<()> {
    let (manifest, learner) = load_run_learner(&run).with_context(|| format!("loading run {}", run.display()))?;
    let before = learner.param_checksum();
    let summary = evaluate_policy(
        learner.as_ref(),
        &manifest.market,
        &manifest.demand,
        episodes.unwrap_or(manifest.eval_episodes),
    )?;
    if learner.param_checksum() != before {
        bail!("parameters changed during evaluation");
    }
    println!(
        "{} seed {}: mean profit {:.2} (std {:.2}) over {} episodes",
        manifest.algorithm,
        manifest.seed,
        summary.mean,
        summary.std,
        summary.episodes.len()
    );
    for (i, p) in summary.per_agent.iter().enumerate() {
        println!("  agent {i}: {p:.2}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_specs() {
        assert_eq!(parse_seeds("0..9").unwrap().0, (0..10).collect::<Vec<u64>>());
        assert_eq!(parse_seeds("2..=3").unwrap().0, vec![2, 3]);
        assert_eq!(parse_seeds("0,3,7").unwrap().0, vec![0, 3, 7]);
        assert_eq!(parse_seeds("5").unwrap().0, vec![5]);
        assert!(parse_seeds("3..1").is_err());
        assert!(parse_seeds("a").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(cli_main(["marl-pricing", "--help"]), 0);
        assert_eq!(cli_main(["marl-pricing", "train", "--help"]), 0);
        assert_eq!(cli_main(["marl-pricing", "frobnicate"]), 2);
        assert_eq!(cli_main(["marl-pricing", "train", "--bogus"]), 2);
        assert_eq!(
            cli_main(["marl-pricing", "train", "--config", "/nonexistent/x.toml"]),
            1
        );
    }
}
