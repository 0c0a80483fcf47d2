use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, HarnessError};
use crate::algos::{
    build_learner, derive_seed, evaluate_episode, Algorithm, EpisodeRecord, EvalEpisode, Hyperparams,
    MultiAgentLearner, TrainConfig, Trainer,
};
use crate::calibration::DemandModel;
use crate::market::{MarketConfig, MarketEnv};
use crate::nn::NetworkSet;

/// Bumped whenever a CSV or manifest layout changes.
pub const SCHEMA_VERSION: u32 = 1;

const EVAL_SEED_BASE: u64 = 0x00E7_A15E_ED00_0000;

/// Environment seeds shared by every evaluation, independent of the
/// training seed.
pub fn eval_seeds(count: usize) -> Vec<u64> {
    (0..count as u64).map(|j| derive_seed(EVAL_SEED_BASE, j)).collect()
}

/// Outcome of one evaluation call.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    /// Mean over evaluation episodes of the per-agent mean profit.
    pub mean: f64,
    /// Population std of the per-episode mean profit.
    pub std: f64,
    /// Per-agent profit averaged over evaluation episodes.
    pub per_agent: Vec<f64>,
    pub episodes: Vec<EvalEpisode>,
}

/// Exploration-free evaluation on fresh environments with the fixed
/// evaluation seeds. Takes the learner by shared reference: no replay
/// writes and no parameter changes are possible.
pub fn evaluate_policy(
    learner: &dyn MultiAgentLearner,
    market: &MarketConfig,
    demand: &DemandModel,
    eval_episodes: usize,
) -> Result<EvalSummary, HarnessError> {
    let n = market.n_sellers;
    let mut env = MarketEnv::new(market.clone(), demand.clone(), 0).map_err(crate::algos::AlgoError::from)?;
    let mut episodes = Vec::with_capacity(eval_episodes);
    for seed in eval_seeds(eval_episodes) {
        episodes.push(evaluate_episode(learner, &mut env, seed)?);
    }
    let means: Vec<f64> = episodes
        .iter()
        .map(|e| e.per_agent_profit.iter().sum::<f64>() / n as f64)
        .collect();
    let k = means.len() as f64;
    let mean = means.iter().sum::<f64>() / k;
    let std = (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / k).sqrt();
    let per_agent = (0..n)
        .map(|i| episodes.iter().map(|e| e.per_agent_profit[i]).sum::<f64>() / k)
        .collect();
    Ok(EvalSummary {
        mean,
        std,
        per_agent,
        episodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub crate_version: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub episodes: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// SHA-256 of everything that determines the run's outputs.
    pub config_hash: String,
    pub market: MarketConfig,
    pub demand: DemandModel,
    pub hyper: Hyperparams,
    pub final_checksum: String,
    pub saturated_actions: u64,
    pub checkpoints: Vec<String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        let m: Self = serde_json::from_str(&text).map_err(|e| HarnessError::Corrupt {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Corrupt {
                path,
                message: format!("schema version {} (expected {SCHEMA_VERSION})", m.schema_version),
            });
        }
        if m.config_hash != m.recompute_hash() {
            return Err(HarnessError::Corrupt {
                path,
                message: "config hash does not match manifest contents".into(),
            });
        }
        Ok(m)
    }

    fn recompute_hash(&self) -> String {
        config_hash(&RunSpec {
            algorithm: self.algorithm,
            seed: self.seed,
            episodes: self.episodes,
            eval_interval: self.eval_interval,
            eval_episodes: self.eval_episodes,
            checkpoint_interval: 0,
            hyper: self.hyper.clone(),
            market: self.market.clone(),
            demand: self.demand.clone(),
            dir: PathBuf::new(),
        })
    }
}

/// One (algorithm, seed) run.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub episodes: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub checkpoint_interval: usize,
    pub hyper: Hyperparams,
    pub market: MarketConfig,
    pub demand: DemandModel,
    pub dir: PathBuf,
}

fn config_hash(spec: &RunSpec) -> String {
    #[derive(Serialize)]
    struct Hashed<'a> {
        algorithm: Algorithm,
        seed: u64,
        episodes: usize,
        eval_interval: usize,
        eval_episodes: usize,
        hyper: &'a Hyperparams,
        market: &'a MarketConfig,
        demand: &'a DemandModel,
    }
    let json = serde_json::to_string(&Hashed {
        algorithm: spec.algorithm,
        seed: spec.seed,
        episodes: spec.episodes,
        eval_interval: spec.eval_interval,
        eval_episodes: spec.eval_episodes,
        hyper: &spec.hyper,
        market: &spec.market,
        demand: &spec.demand,
    })
    .expect("plain data serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Summary of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub algorithm: Algorithm,
    pub seed: u64,
    /// `(episode, mean)` for every evaluation row, baseline included.
    pub evals: Vec<(usize, f64)>,
    pub final_checksum: u64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn create_file(path: &Path) -> Result<fs::File, HarnessError> {
    fs::File::create(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct RunWriter {
    dir: PathBuf,
    curves: csv::Writer<fs::File>,
    evals: csv::Writer<fs::File>,
    n_agents: usize,
}

impl RunWriter {
    fn new(dir: &Path, n_agents: usize) -> Result<Self, HarnessError> {
        create_dir(&dir.join("traces"))?;
        create_dir(&dir.join("checkpoints"))?;
        let mut curves = csv::Writer::from_writer(create_file(&dir.join("curves.csv"))?);
        curves.write_record([
            "episode",
            "agent",
            "profit",
            "mean_profit",
            "discounted_mean_return",
            "actor_loss",
            "critic_loss",
            "entropy",
            "alpha",
            "updates",
            "skipped_updates",
            "aborted_updates",
        ])?;
        let mut evals = csv::Writer::from_writer(create_file(&dir.join("evals.csv"))?);
        let mut header = vec!["episode".to_string(), "mean".into(), "std".into()];
        header.extend((0..n_agents).map(|i| format!("profit_{i}")));
        evals.write_record(&header)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            curves,
            evals,
            n_agents,
        })
    }

    fn episode(&mut self, rec: &EpisodeRecord) -> Result<(), HarnessError> {
        let s = &rec.stats;
        for (i, p) in rec.per_agent_profit.iter().enumerate() {
            self.curves.write_record([
                rec.episode.to_string(),
                i.to_string(),
                p.to_string(),
                rec.mean_profit.to_string(),
                rec.discounted_mean_return.to_string(),
                fmt_opt(s.actor_loss()),
                fmt_opt(s.critic_loss()),
                fmt_opt(s.entropy()),
                fmt_opt(s.alpha()),
                s.updates.to_string(),
                s.skipped.to_string(),
                s.aborted.to_string(),
            ])?;
        }
        Ok(())
    }

    fn eval(&mut self, episode: usize, summary: &EvalSummary) -> Result<(), HarnessError> {
        let mut row = vec![episode.to_string(), summary.mean.to_string(), summary.std.to_string()];
        row.extend(summary.per_agent.iter().map(|p| p.to_string()));
        debug_assert_eq!(row.len(), 3 + self.n_agents);
        self.evals.write_record(&row)?;
        self.evals.flush().map_err(io_err(&self.dir))?;

        let path = self.dir.join("traces").join(format!("eval_{episode:04}.csv"));
        let mut w = csv::Writer::from_writer(create_file(&path)?);
        w.write_record([
            "episode",
            "eval_episode",
            "t",
            "agent",
            "price",
            "share",
            "demand",
            "reward",
        ])?;
        for (k, ep) in summary.episodes.iter().enumerate() {
            for s in &ep.trace {
                w.write_record([
                    episode.to_string(),
                    k.to_string(),
                    s.t.to_string(),
                    s.agent.to_string(),
                    s.price.to_string(),
                    s.share.to_string(),
                    s.demand.to_string(),
                    s.reward.to_string(),
                ])?;
            }
        }
        w.flush().map_err(io_err(&path))?;
        Ok(())
    }

    fn checkpoint(&self, set: &NetworkSet) -> Result<String, HarnessError> {
        let name = format!("ep_{:04}.json", set.episode);
        set.save(&self.dir.join("checkpoints").join(&name))
            .map_err(crate::algos::AlgoError::from)?;
        Ok(name)
    }

    fn finish(mut self) -> Result<(), HarnessError> {
        self.curves.flush().map_err(io_err(&self.dir))?;
        self.evals.flush().map_err(io_err(&self.dir))?;
        Ok(())
    }
}

/// Trains one (algorithm, seed) pair with evaluation at episode 0 and every
/// `eval_interval` episodes, writing all artifacts into `spec.dir`.
pub fn run_single(spec: &RunSpec) -> Result<RunSummary, HarnessError> {
    create_dir(&spec.dir)?;
    let n = spec.market.n_sellers;
    let mut trainer = Trainer::new(TrainConfig {
        algorithm: spec.algorithm,
        hyper: spec.hyper.clone(),
        market: spec.market.clone(),
        demand: spec.demand.clone(),
        episodes: spec.episodes,
        seed: spec.seed,
    })?;
    let mut writer = RunWriter::new(&spec.dir, n)?;
    let mut checkpoints = vec![writer.checkpoint(&trainer.learner().checkpoint(0))?];
    let mut evals = Vec::new();

    let baseline = evaluate_policy(trainer.learner(), &spec.market, &spec.demand, spec.eval_episodes)?;
    writer.eval(0, &baseline)?;
    evals.push((0, baseline.mean));

    for _ in 0..spec.episodes {
        let rec = trainer.run_episode()?;
        writer.episode(&rec)?;
        let ep = rec.episode;
        if ep % spec.eval_interval == 0 {
            let summary = evaluate_policy(trainer.learner(), &spec.market, &spec.demand, spec.eval_episodes)?;
            writer.eval(ep, &summary)?;
            evals.push((ep, summary.mean));
            info!(
                "{} seed {} episode {ep}: eval mean profit {:.1}",
                spec.algorithm, spec.seed, summary.mean
            );
        }
        if spec.checkpoint_interval > 0 && ep % spec.checkpoint_interval == 0 && ep != spec.episodes {
            checkpoints.push(writer.checkpoint(&trainer.learner().checkpoint(ep))?);
        }
    }
    checkpoints.push(writer.checkpoint(&trainer.learner().checkpoint(spec.episodes))?);
    writer.finish()?;

    let final_checksum = trainer.learner().param_checksum();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        algorithm: spec.algorithm,
        seed: spec.seed,
        episodes: spec.episodes,
        eval_interval: spec.eval_interval,
        eval_episodes: spec.eval_episodes,
        config_hash: config_hash(spec),
        market: spec.market.clone(),
        demand: spec.demand.clone(),
        hyper: spec.hyper.clone(),
        final_checksum: format!("{final_checksum:016x}"),
        saturated_actions: trainer.saturated_actions(),
        checkpoints,
    };
    let path = spec.dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let mut f = create_file(&path)?;
    f.write_all(text.as_bytes()).map_err(io_err(&path))?;
    f.write_all(b"\n").map_err(io_err(&path))?;

    Ok(RunSummary {
        dir: spec.dir.clone(),
        algorithm: spec.algorithm,
        seed: spec.seed,
        evals,
        final_checksum,
    })
}

pub fn run_dir_name(algorithm: Algorithm, seed: u64) -> String {
    format!("{algorithm}_seed{seed}")
}

/// Every (algorithm, seed) run of the experiment. Inputs are checked before
/// any training starts; runs execute on up to `config.workers` threads and
/// results come back in (algorithm, seed) order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunSummary>, HarnessError> {
    config.validate()?;
    let demand = config.demand()?;
    let market = config.market_config()?;
    create_dir(&config.output_dir)?;
    let probe = config.output_dir.join(".write_probe");
    fs::write(&probe, b"").map_err(io_err(&config.output_dir))?;
    fs::remove_file(&probe).map_err(io_err(&probe))?;

    let specs: Vec<RunSpec> = config
        .algorithms
        .iter()
        .flat_map(|&algorithm| config.seeds.iter().map(move |&seed| (algorithm, seed)))
        .map(|(algorithm, seed)| RunSpec {
            algorithm,
            seed,
            episodes: config.episodes,
            eval_interval: config.eval_interval,
            eval_episodes: config.eval_episodes,
            checkpoint_interval: config.checkpoint_interval,
            hyper: config.hyper.clone(),
            market: market.clone(),
            demand: demand.clone(),
            dir: config.output_dir.join(run_dir_name(algorithm, seed)),
        })
        .collect();
    info!("{} runs, {} workers", specs.len(), config.workers);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    pool.install(|| specs.par_iter().map(run_single).collect())
}

/// Loads the latest checkpoint of a finished run into a fresh learner.
pub fn load_run_learner(dir: &Path) -> Result<(Manifest, Box<dyn MultiAgentLearner>), HarnessError> {
    let manifest = Manifest::load(dir)?;
    let last = manifest.checkpoints.last().ok_or_else(|| HarnessError::Corrupt {
        path: dir.join("manifest.json"),
        message: "no checkpoints recorded".into(),
    })?;
    let set = NetworkSet::load(&dir.join("checkpoints").join(last)).map_err(crate::algos::AlgoError::from)?;
    let mut learner = build_learner(
        manifest.algorithm,
        &manifest.hyper,
        manifest.market.n_sellers,
        manifest.seed,
    )?;
    learner.restore(&set)?;
    Ok((manifest, learner))
}
