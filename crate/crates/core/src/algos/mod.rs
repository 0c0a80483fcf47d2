//! Multi-agent trainers: MAPPO (on-policy, centralized value), MADDPG and
//! MASAC (off-policy, centralized critics) and IDDPG (off-policy,
//! independent critics).
//!
//! Every learner acts through [`MultiAgentLearner`]. Execution-time actions
//! come from [`MultiAgentLearner::act_deterministic`], which takes one
//! agent's [`AgentObservation`] and nothing else.

mod common;
mod ddpg;
mod gae;
mod losses;
mod mappo;
mod masac;
mod replay;
mod trainer;

pub use ddpg::Ddpg;
pub use gae::compute_gae;
pub use losses::{
    clipped_surrogate, clipped_surrogate_grad, critic_regression, ddpg_actor_loss, ddpg_critic_target,
    masac_critic_target, ppo_actor_loss, sac_actor_loss, PolicyGrads, PpoLossStats,
};
pub use mappo::Mappo;
pub use masac::Masac;
pub use replay::ReplayBuffer;
pub use trainer::{
    evaluate_episode, reward_scale, train, EpisodeRecord, EvalEpisode, StepTrace, TrainConfig, TrainOutcome, Trainer,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{AgentObservation, MarketError};
use crate::nn::{NetworkSet, NnError};

#[derive(Debug, Error)]
pub enum AlgoError {
    #[error("unknown algorithm '{0}' (expected one of mappo, maddpg, masac, iddpg)")]
    UnknownAlgorithm(String),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("invalid hyperparameter {name}: {reason}")]
    Hyperparameter { name: &'static str, reason: String },
    #[error("network: {0}")]
    Nn(#[from] NnError),
    #[error("market: {0}")]
    Market(#[from] MarketError),
    #[error("checkpoint does not match this learner: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Mappo,
    Maddpg,
    Masac,
    Iddpg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Mappo, Algorithm::Maddpg, Algorithm::Masac, Algorithm::Iddpg];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mappo => "mappo",
            Algorithm::Maddpg => "maddpg",
            Algorithm::Masac => "masac",
            Algorithm::Iddpg => "iddpg",
        }
    }

    pub fn is_off_policy(self) -> bool {
        !matches!(self, Algorithm::Mappo)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = AlgoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mappo" => Ok(Algorithm::Mappo),
            "maddpg" => Ok(Algorithm::Maddpg),
            "masac" => Ok(Algorithm::Masac),
            "iddpg" => Ok(Algorithm::Iddpg),
            other => Err(AlgoError::UnknownAlgorithm(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub gamma: f64,
    pub learning_rate: f64,
    pub clip_epsilon: f64,
    pub gae_lambda: f64,
    pub minibatch_size: usize,
    pub ppo_epochs: usize,
    pub buffer_capacity: usize,
    /// Transitions collected before off-policy updates start.
    pub warmup: usize,
    pub tau: f64,
    /// Std of the additive Gaussian exploration noise for DDPG-family actors.
    pub exploration_sigma: f64,
    pub initial_alpha: f64,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub value_hidden: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            learning_rate: 3e-4,
            clip_epsilon: 0.2,
            gae_lambda: 0.95,
            minibatch_size: 128,
            ppo_epochs: 4,
            buffer_capacity: 100_000,
            warmup: 1000,
            tau: 0.005,
            exploration_sigma: 0.1,
            initial_alpha: 0.2,
            actor_hidden: 128,
            critic_hidden: 256,
            value_hidden: 128,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), AlgoError> {
        let bad = |name, reason: &str| {
            Err(AlgoError::Hyperparameter {
                name,
                reason: reason.into(),
            })
        };
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1)");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate", "must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda", "must lie in [0, 1]");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon", "must be > 0");
        }
        if self.minibatch_size == 0 || self.ppo_epochs == 0 || self.buffer_capacity == 0 {
            return bad("minibatch_size/ppo_epochs/buffer_capacity", "must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau", "must lie in [0, 1]");
        }
        if !(self.exploration_sigma >= 0.0) {
            return bad("exploration_sigma", "must be >= 0");
        }
        if !(self.initial_alpha > 0.0) {
            return bad("initial_alpha", "must be > 0");
        }
        if self.actor_hidden == 0 || self.critic_hidden == 0 || self.value_hidden == 0 {
            return bad("hidden sizes", "must be >= 1");
        }
        Ok(())
    }
}

/// One joint environment step as stored for learning. Rewards are already
/// scaled to learner units.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub observations: Vec<AgentObservation>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_state: Vec<f64>,
    pub next_observations: Vec<AgentObservation>,
    pub done: bool,
}

/// Joint exploratory action plus what the on-policy learner needs to
/// recompute likelihood ratios later.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChoice {
    pub actions: Vec<f64>,
    pub pre_tanh: Option<Vec<f64>>,
    pub log_probs: Option<Vec<f64>>,
}

/// Accumulated optimisation diagnostics for one episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub updates: usize,
    pub skipped: usize,
    pub aborted: usize,
    actor_loss_sum: f64,
    critic_loss_sum: f64,
    alpha_sum: f64,
    entropy_sum: f64,
    alpha_count: usize,
    entropy_count: usize,
}

impl UpdateStats {
    pub fn record(&mut self, actor_loss: f64, critic_loss: f64) {
        self.updates += 1;
        self.actor_loss_sum += actor_loss;
        self.critic_loss_sum += critic_loss;
    }

    pub fn record_alpha(&mut self, alpha: f64) {
        self.alpha_sum += alpha;
        self.alpha_count += 1;
    }

    pub fn record_entropy(&mut self, entropy: f64) {
        self.entropy_sum += entropy;
        self.entropy_count += 1;
    }

    pub fn merge(&mut self, other: &UpdateStats) {
        self.updates += other.updates;
        self.skipped += other.skipped;
        self.aborted += other.aborted;
        self.actor_loss_sum += other.actor_loss_sum;
        self.critic_loss_sum += other.critic_loss_sum;
        self.alpha_sum += other.alpha_sum;
        self.entropy_sum += other.entropy_sum;
        self.alpha_count += other.alpha_count;
        self.entropy_count += other.entropy_count;
    }

    pub fn actor_loss(&self) -> Option<f64> {
        (self.updates > 0).then(|| self.actor_loss_sum / self.updates as f64)
    }

    pub fn critic_loss(&self) -> Option<f64> {
        (self.updates > 0).then(|| self.critic_loss_sum / self.updates as f64)
    }

    /// Mean entropy coefficient (MASAC only).
    pub fn alpha(&self) -> Option<f64> {
        (self.alpha_count > 0).then(|| self.alpha_sum / self.alpha_count as f64)
    }

    /// Mean policy entropy estimate (stochastic policies only).
    pub fn entropy(&self) -> Option<f64> {
        (self.entropy_count > 0).then(|| self.entropy_sum / self.entropy_count as f64)
    }
}

pub trait MultiAgentLearner: Send {
    fn algorithm(&self) -> Algorithm;

    fn n_agents(&self) -> usize;

    /// Training-time joint action with exploration.
    fn explore(&mut self, observations: &[AgentObservation]) -> Result<ActionChoice, AlgoError>;

    /// Exploration-free action of one agent from its own observation.
    fn act_deterministic(&self, agent: usize, observation: &AgentObservation) -> Result<f64, AlgoError>;

    /// Stores a transition; off-policy learners run their per-step update here.
    fn record(&mut self, transition: Transition, choice: &ActionChoice) -> Result<UpdateStats, AlgoError>;

    /// Called after the last step of an episode; MAPPO updates here.
    fn end_episode(&mut self) -> Result<UpdateStats, AlgoError>;

    fn checkpoint(&self, episode: usize) -> NetworkSet;

    /// Loads actor (and, where present, critic) parameters.
    fn restore(&mut self, checkpoint: &NetworkSet) -> Result<(), AlgoError>;

    /// Hash over every trainable parameter and target network.
    fn param_checksum(&self) -> u64;

    /// Transitions held in replay (0 for on-policy learners).
    fn replay_len(&self) -> usize;
}

/// Deterministic per-purpose seed derivation (SplitMix64 finaliser).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent random streams derived from one master seed.
pub mod streams {
    pub const ENVIRONMENT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const ACTIONS: u64 = 3;
    pub const UPDATES: u64 = 4;
}

pub fn build_learner(
    algorithm: Algorithm,
    hyper: &Hyperparams,
    n_agents: usize,
    seed: u64,
) -> Result<Box<dyn MultiAgentLearner>, AlgoError> {
    hyper.validate()?;
    Ok(match algorithm {
        Algorithm::Mappo => Box::new(Mappo::new(hyper.clone(), n_agents, seed)?),
        Algorithm::Maddpg => Box::new(Ddpg::new(hyper.clone(), n_agents, true, seed)?),
        Algorithm::Iddpg => Box::new(Ddpg::new(hyper.clone(), n_agents, false, seed)?),
        Algorithm::Masac => Box::new(Masac::new(hyper.clone(), n_agents, seed)?),
    })
}
