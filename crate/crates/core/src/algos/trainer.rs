use log::debug;
use serde::{Deserialize, Serialize};

use super::{
    build_learner, derive_seed, streams, AlgoError, Algorithm, Hyperparams, MultiAgentLearner, Transition, UpdateStats,
};
use crate::calibration::DemandModel;
use crate::market::{MarketConfig, MarketEnv};
use crate::nn::NetworkSet;

/// Multiplier that brings a per-step reward at the reference price and an
/// even split of base demand to about 1. Learners see scaled rewards; every
/// reported profit stays in currency units.
pub fn reward_scale(market: &MarketConfig, demand: &DemandModel) -> f64 {
    let unit = (1.0 - market.cost_ratio) * market.reference_price * demand.base_demand / market.n_sellers as f64;
    if unit > 0.0 && unit.is_finite() {
        1.0 / unit
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub hyper: Hyperparams,
    pub market: MarketConfig,
    pub demand: DemandModel,
    pub episodes: usize,
    pub seed: u64,
}

/// Per-episode training record in currency units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRecord {
    /// 1-based index of the finished episode.
    pub episode: usize,
    pub per_agent_profit: Vec<f64>,
    pub mean_profit: f64,
    /// `sum_t gamma^t mean_i r_{i,t}`.
    pub discounted_mean_return: f64,
    pub stats: UpdateStats,
}

/// One agent at one step of an evaluation rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub t: usize,
    pub agent: usize,
    pub price: f64,
    pub share: f64,
    pub demand: f64,
    pub reward: f64,
}

pub struct Trainer {
    config: TrainConfig,
    env: MarketEnv,
    learner: Box<dyn MultiAgentLearner>,
    reward_scale: f64,
    episodes_done: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, AlgoError> {
        let env = MarketEnv::new(
            config.market.clone(),
            config.demand.clone(),
            derive_seed(config.seed, streams::ENVIRONMENT),
        )?;
        let learner = build_learner(config.algorithm, &config.hyper, config.market.n_sellers, config.seed)?;
        Ok(Self {
            reward_scale: reward_scale(&config.market, &config.demand),
            config,
            env,
            learner,
            episodes_done: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn learner(&self) -> &dyn MultiAgentLearner {
        self.learner.as_ref()
    }

    pub fn learner_mut(&mut self) -> &mut dyn MultiAgentLearner {
        self.learner.as_mut()
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn saturated_actions(&self) -> u64 {
        self.env.saturated_actions()
    }

    /// Plays one exploratory episode and lets the learner update.
    pub fn run_episode(&mut self) -> Result<EpisodeRecord, AlgoError> {
        let n = self.config.market.n_sellers;
        let gamma = self.config.hyper.gamma;
        let mut observations = self.env.reset();
        let mut state = self.env.global_state();
        let mut profit = vec![0.0; n];
        let mut discounted = 0.0;
        let mut discount = 1.0;
        let mut stats = UpdateStats::default();
        loop {
            let choice = self.learner.explore(&observations)?;
            let outcome = self.env.step(&choice.actions)?;
            for (p, r) in profit.iter_mut().zip(&outcome.rewards) {
                *p += r;
            }
            discounted += discount * outcome.rewards.iter().sum::<f64>() / n as f64;
            discount *= gamma;
            let next_state = self.env.global_state();
            let transition = Transition {
                state,
                observations,
                actions: choice.actions.clone(),
                rewards: outcome.rewards.iter().map(|r| r * self.reward_scale).collect(),
                next_state: next_state.clone(),
                next_observations: outcome.observations.clone(),
                done: outcome.done,
            };
            stats.merge(&self.learner.record(transition, &choice)?);
            if outcome.done {
                break;
            }
            observations = outcome.observations;
            state = next_state;
        }
        stats.merge(&self.learner.end_episode()?);
        self.episodes_done += 1;
        let mean_profit = profit.iter().sum::<f64>() / n as f64;
        debug!(
            "{} seed {} episode {}: mean profit {:.1}, {} updates, {} skipped",
            self.config.algorithm, self.config.seed, self.episodes_done, mean_profit, stats.updates, stats.skipped
        );
        Ok(EpisodeRecord {
            episode: self.episodes_done,
            per_agent_profit: profit,
            mean_profit,
            discounted_mean_return: discounted,
            stats,
        })
    }
}

/// Result of one exploration-free episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalEpisode {
    pub per_agent_profit: Vec<f64>,
    /// `prices[t][i]`.
    pub prices: Vec<Vec<f64>>,
    pub shares: Vec<Vec<f64>>,
    pub trace: Vec<StepTrace>,
}

/// Runs the learner's exploration-free policies for one episode on `env`
/// after reseeding it. Each agent acts on its own observation only.
pub fn evaluate_episode(
    learner: &dyn MultiAgentLearner,
    env: &mut MarketEnv,
    seed: u64,
) -> Result<EvalEpisode, AlgoError> {
    let n = env.config().n_sellers;
    let mut observations = env.reset_with_seed(seed);
    let mut profit = vec![0.0; n];
    let mut prices = Vec::new();
    let mut shares = Vec::new();
    let mut trace = Vec::new();
    loop {
        let actions = observations
            .iter()
            .enumerate()
            .map(|(i, o)| learner.act_deterministic(i, o))
            .collect::<Result<Vec<_>, _>>()?;
        let t = env.state().t;
        let out = env.step(&actions)?;
        for i in 0..n {
            profit[i] += out.rewards[i];
            trace.push(StepTrace {
                t,
                agent: i,
                price: out.prices[i],
                share: out.shares[i],
                demand: out.demands[i],
                reward: out.rewards[i],
            });
        }
        prices.push(out.prices.clone());
        shares.push(out.shares.clone());
        if out.done {
            break;
        }
        observations = out.observations;
    }
    Ok(EvalEpisode {
        per_agent_profit: profit,
        prices,
        shares,
        trace,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: Vec<EpisodeRecord>,
    pub initial: NetworkSet,
    pub last: NetworkSet,
    pub final_checksum: u64,
}

/// Trains for `config.episodes` episodes without evaluation.
pub fn train(config: TrainConfig) -> Result<TrainOutcome, AlgoError> {
    let episodes = config.episodes;
    let mut trainer = Trainer::new(config)?;
    let initial = trainer.learner().checkpoint(0);
    let mut curve = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        curve.push(trainer.run_episode()?);
    }
    Ok(TrainOutcome {
        curve,
        initial,
        last: trainer.learner().checkpoint(episodes),
        final_checksum: trainer.learner().param_checksum(),
    })
}
