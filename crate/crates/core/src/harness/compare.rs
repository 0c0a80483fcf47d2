use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::run::Manifest;
use super::HarnessError;
use crate::algos::Algorithm;
use crate::metrics::{
    average_profit, competitiveness, gini, jain_index, render_table, sample_efficiency, stability, CurvePoint,
    EvalReport, LearningCurve,
};

/// One row of `evals.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub episode: usize,
    pub mean: f64,
    pub std: f64,
    pub per_agent: Vec<f64>,
}

/// `(prices[t], shares[t])` of one agent.
type AgentSeries = (Vec<f64>, Vec<f64>);

/// `(prices[t][i], shares[t][i])` of one evaluation episode.
pub type EpisodeTrace = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Everything `compare` reads from one run directory.
#[derive(Debug, Clone)]
pub struct RunData {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub evals: Vec<EvalRow>,
    /// Final evaluation rollouts: `[eval_episode] -> (prices[t][i], shares[t][i])`.
    pub final_traces: Vec<EpisodeTrace>,
}

fn corrupt(path: &Path, message: impl Into<String>) -> HarnessError {
    HarnessError::Corrupt {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn parse_f64(path: &Path, s: &str) -> Result<f64, HarnessError> {
    s.parse().map_err(|_| corrupt(path, format!("'{s}' is not a number")))
}

fn parse_usize(path: &Path, s: &str) -> Result<usize, HarnessError> {
    s.parse().map_err(|_| corrupt(path, format!("'{s}' is not an integer")))
}

pub fn read_evals(path: &Path) -> Result<Vec<EvalRow>, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| corrupt(path, e.to_string()))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| corrupt(path, e.to_string()))?;
        if record.len() < 4 {
            return Err(corrupt(path, "eval row has fewer than 4 columns"));
        }
        rows.push(EvalRow {
            episode: parse_usize(path, &record[0])?,
            mean: parse_f64(path, &record[1])?,
            std: parse_f64(path, &record[2])?,
            per_agent: record
                .iter()
                .skip(3)
                .map(|s| parse_f64(path, s))
                .collect::<Result<_, _>>()?,
        });
    }
    Ok(rows)
}

fn read_trace(path: &Path, n_agents: usize) -> Result<Vec<EpisodeTrace>, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| corrupt(path, e.to_string()))?;
    let mut episodes: BTreeMap<usize, BTreeMap<usize, AgentSeries>> = BTreeMap::new();
    for record in reader.records() {
        let r = record.map_err(|e| corrupt(path, e.to_string()))?;
        if r.len() != 8 {
            return Err(corrupt(path, "trace rows need 8 columns"));
        }
        let k = parse_usize(path, &r[1])?;
        let t = parse_usize(path, &r[2])?;
        let agent = parse_usize(path, &r[3])?;
        if agent >= n_agents {
            return Err(corrupt(path, format!("agent {agent} out of range")));
        }
        let step = episodes
            .entry(k)
            .or_default()
            .entry(t)
            .or_insert_with(|| (vec![f64::NAN; n_agents], vec![f64::NAN; n_agents]));
        step.0[agent] = parse_f64(path, &r[4])?;
        step.1[agent] = parse_f64(path, &r[5])?;
    }
    episodes
        .into_values()
        .map(|steps| {
            let (prices, shares): (Vec<_>, Vec<_>) = steps.into_values().unzip();
            if prices.iter().chain(&shares).any(|row| row.iter().any(|v| v.is_nan())) {
                return Err(corrupt(path, "trace has missing agents"));
            }
            Ok((prices, shares))
        })
        .collect()
}

pub fn load_run(dir: &Path) -> Result<RunData, HarnessError> {
    let manifest = Manifest::load(dir)?;
    let evals = read_evals(&dir.join("evals.csv"))?;
    let last = evals
        .last()
        .ok_or_else(|| corrupt(&dir.join("evals.csv"), "no evaluation rows"))?;
    let trace_path = dir.join("traces").join(format!("eval_{:04}.csv", last.episode));
    let final_traces = read_trace(&trace_path, manifest.market.n_sellers)?;
    Ok(RunData {
        dir: dir.to_path_buf(),
        manifest,
        evals,
        final_traces,
    })
}

/// Run directories under `paths`: each path is either a run directory
/// (holding `manifest.json`) or a parent whose immediate children are.
pub fn discover_runs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, HarnessError> {
    let mut out = Vec::new();
    for p in paths {
        if p.join("manifest.json").is_file() {
            out.push(p.clone());
            continue;
        }
        let entries = fs::read_dir(p).map_err(|source| HarnessError::Io {
            path: p.clone(),
            source,
        })?;
        let mut children: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|c| c.is_dir())
            .collect();
        children.sort();
        let before = out.len();
        out.extend(children.into_iter().filter(|c| c.join("manifest.json").exists()));
        if out.len() == before {
            warn!("{} holds no runs", p.display());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reports: Vec<EvalReport>,
    /// Runs left out, with the reason.
    pub excluded: Vec<(PathBuf, String)>,
}

impl Comparison {
    pub fn table(&self) -> String {
        render_table(&self.reports)
    }
}

fn post_baseline_means(evals: &[EvalRow]) -> Vec<f64> {
    let post: Vec<f64> = evals.iter().filter(|r| r.episode > 0).map(|r| r.mean).collect();
    if post.is_empty() {
        evals.iter().map(|r| r.mean).collect()
    } else {
        post
    }
}

/// Seed-averaged evaluation curve over the episodes every run shares.
fn mean_curve(runs: &[&RunData]) -> Option<LearningCurve> {
    let first = runs.first()?;
    let points = first
        .evals
        .iter()
        .filter_map(|row| {
            let means: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.evals.iter().find(|e| e.episode == row.episode).map(|e| e.mean))
                .collect();
            (means.len() == runs.len()).then(|| CurvePoint {
                episode: row.episode,
                mean_profit: means.iter().sum::<f64>() / means.len() as f64,
                per_agent: Vec::new(),
            })
        })
        .collect();
    LearningCurve::new(points).ok()
}

fn average(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn report(algorithm: Algorithm, runs: &[&RunData], baseline: Option<f64>) -> EvalReport {
    let per_seed: Vec<(f64, bool)> = runs
        .iter()
        .filter_map(|r| average_profit(&post_baseline_means(&r.evals)).map(|a| (a.value, a.short)))
        .collect();
    let values: Vec<f64> = per_seed.iter().map(|p| p.0).collect();

    let n = runs[0].manifest.market.n_sellers;
    let per_agent_profit: Vec<f64> = (0..n)
        .map(|i| {
            let v: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.evals.last().and_then(|e| e.per_agent.get(i).copied()))
                .collect();
            average(&v).unwrap_or(f64::NAN)
        })
        .collect();

    let comps: Vec<_> = runs
        .iter()
        .flat_map(|r| r.final_traces.iter())
        .filter_map(|(p, s)| competitiveness(p, s).ok())
        .collect();
    let price_volatility = (0..n)
        .map(|i| average(&comps.iter().map(|c| c.volatility[i]).collect::<Vec<_>>()).unwrap_or(f64::NAN))
        .collect();
    let undercut_frequency = (0..n)
        .map(|i| average(&comps.iter().map(|c| c.undercut_frequency[i]).collect::<Vec<_>>()).unwrap_or(f64::NAN))
        .collect();
    let corrs: Vec<f64> = comps.iter().filter_map(|c| c.mean_price_correlation).collect();

    EvalReport {
        algorithm: algorithm.name().to_string(),
        seeds: runs.len(),
        average_profit: average(&values),
        average_profit_short: per_seed.iter().any(|p| p.1),
        stability_std: stability(&values),
        sample_efficiency_episodes: baseline.and_then(|b| mean_curve(runs).and_then(|c| sample_efficiency(&c, b))),
        jain: jain_index(&per_agent_profit).ok().flatten(),
        gini: gini(&per_agent_profit),
        per_agent_profit,
        price_volatility,
        undercut_frequency,
        mean_price_correlation: average(&corrs),
        market_share_churn: average(&comps.iter().map(|c| c.churn).collect::<Vec<_>>()),
        competitive_intensity: runs[0].manifest.market.beta,
    }
}

/// Per-algorithm comparison over the given run (or experiment) directories.
/// Runs with a missing or corrupt manifest or eval file are excluded with a
/// warning rather than failing the report.
pub fn compare(paths: &[PathBuf]) -> Result<Comparison, HarnessError> {
    let mut excluded = Vec::new();
    let mut by_algo: BTreeMap<Algorithm, Vec<RunData>> = BTreeMap::new();
    for dir in discover_runs(paths)? {
        match load_run(&dir) {
            Ok(run) => by_algo.entry(run.manifest.algorithm).or_default().push(run),
            Err(e) => {
                warn!("excluding {}: {e}", dir.display());
                excluded.push((dir, e.to_string()));
            }
        }
    }
    for p in paths {
        if !p.join("manifest.json").exists() && !p.is_dir() {
            excluded.push((p.clone(), "not a directory".into()));
        }
    }
    if by_algo.is_empty() {
        return Err(HarnessError::Config("no usable runs to compare".into()));
    }

    let baseline = by_algo.get(&Algorithm::Iddpg).and_then(|runs| {
        let refs: Vec<&RunData> = runs.iter().collect();
        report(Algorithm::Iddpg, &refs, None).average_profit
    });
    let reports = by_algo
        .iter()
        .map(|(&algo, runs)| {
            let refs: Vec<&RunData> = runs.iter().collect();
            report(algo, &refs, baseline)
        })
        .collect();
    Ok(Comparison { reports, excluded })
}

/// Writes `compare.json` and `compare.txt` next to each other.
pub fn write_comparison(comparison: &Comparison, json_path: &Path) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(comparison).expect("report serializes");
    fs::write(json_path, text + "\n").map_err(|source| HarnessError::Io {
        path: json_path.to_path_buf(),
        source,
    })?;
    let table_path = json_path.with_extension("txt");
    fs::write(&table_path, comparison.table()).map_err(|source| HarnessError::Io {
        path: table_path,
        source,
    })
}
