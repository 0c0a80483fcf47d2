//! Competitive retail marketplace.
//!
//! Each step every seller posts a price inside `p_ref * (1 +/- band)`. Total
//! market demand follows the calibrated constant-elasticity law at the
//! share-weighted average price ratio, plus clipped Gaussian noise. That
//! demand is split by a softmax over `-beta * p_i / p_ref`. Each seller earns
//! `(1 - cost_ratio) * p_i * d_i`.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::DemandModel;

/// Width of the sales-velocity window.
pub const DEMAND_HISTORY: usize = 3;
/// Features per agent observation.
pub const OBS_DIM: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum MarketError {
    #[error("invalid market config: {field} {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("episode already finished; call reset first")]
    EpisodeDone,
    #[error("expected {expected} actions, got {found}")]
    ActionCount { expected: usize, found: usize },
    #[error("action {index} is not finite")]
    NonFiniteAction { index: usize },
    #[error("agent index {index} out of range for {n} sellers")]
    AgentIndex { index: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    pub n_sellers: usize,
    pub horizon: usize,
    pub price_band: f64,
    pub beta: f64,
    pub cost_ratio: f64,
    pub noise_sigma: f64,
    pub noise_clip: f64,
    pub reference_price: f64,
    pub initial_inventory: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            n_sellers: 3,
            horizon: 24,
            price_band: 0.30,
            beta: 10.0,
            cost_ratio: 0.70,
            noise_sigma: 730.0,
            noise_clip: 3.0,
            reference_price: 1.0,
            initial_inventory: 1e9,
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<(), MarketError> {
        let bad = |field, reason: &str| {
            Err(MarketError::InvalidConfig {
                field,
                reason: reason.into(),
            })
        };
        if self.n_sellers < 2 {
            return bad("n_sellers", "must be at least 2 (competition needs rivals)");
        }
        if self.horizon < 1 {
            return bad("horizon", "must be at least 1");
        }
        if !(self.price_band > 0.0 && self.price_band < 1.0) {
            return bad("price_band", "must lie in (0, 1)");
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad("beta", "must be finite and >= 0");
        }
        if !(self.cost_ratio >= 0.0 && self.cost_ratio < 1.0) {
            return bad("cost_ratio", "must lie in [0, 1)");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma", "must be finite and >= 0");
        }
        if !(self.noise_clip >= 0.0) || !self.noise_clip.is_finite() {
            return bad("noise_clip", "must be finite and >= 0");
        }
        if !(self.reference_price > 0.0) || !self.reference_price.is_finite() {
            return bad("reference_price", "must be finite and > 0");
        }
        if !(self.initial_inventory >= 0.0) {
            return bad("initial_inventory", "must be >= 0");
        }
        Ok(())
    }

    pub fn min_price(&self) -> f64 {
        self.reference_price * (1.0 - self.price_band)
    }

    pub fn max_price(&self) -> f64 {
        self.reference_price * (1.0 + self.price_band)
    }

    /// Length of [`MarketEnv::global_state`].
    pub fn global_state_dim(&self) -> usize {
        self.n_sellers * OBS_DIM + self.n_sellers
    }
}

/// One seller's local view: `[p / p_ref, velocity, inventory fraction, t / T]`.
///
/// Velocity is the mean of the seller's last few realized demands divided by
/// its base share `base_demand / n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentObservation([f64; OBS_DIM]);

impl AgentObservation {
    pub fn new(features: [f64; OBS_DIM]) -> Self {
        Self(features)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn normalized_price(&self) -> f64 {
        self.0[0]
    }

    pub fn sales_velocity(&self) -> f64 {
        self.0[1]
    }

    pub fn inventory_fraction(&self) -> f64 {
        self.0[2]
    }

    pub fn time_fraction(&self) -> f64 {
        self.0[3]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketState {
    pub t: usize,
    pub prices: Vec<f64>,
    pub inventories: Vec<f64>,
    pub demand_history: Vec<VecDeque<f64>>,
    pub last_shares: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observations: Vec<AgentObservation>,
    pub rewards: Vec<f64>,
    pub demands: Vec<f64>,
    pub prices: Vec<f64>,
    pub shares: Vec<f64>,
    pub total_demand: f64,
    pub done: bool,
}

/// Maps a normalized action to a price. Out-of-range actions are clamped;
/// the second value reports whether clamping happened.
pub fn scale_action(action: f64, config: &MarketConfig) -> (f64, bool) {
    let clamped = action.clamp(-1.0, 1.0);
    (
        config.reference_price * (1.0 + config.price_band * clamped),
        clamped != action,
    )
}

/// Softmax market shares over `-beta * p_i / p_ref`, with log-sum-exp shift.
pub fn allocate_shares(prices: &[f64], beta: f64, reference_price: f64) -> Vec<f64> {
    let logits: Vec<f64> = prices.iter().map(|p| -beta * p / reference_price).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gaussian noise term for a standard-normal draw `z`, clipped to
/// `+/- clip * sigma`.
pub fn clipped_noise(z: f64, sigma: f64, clip: f64) -> f64 {
    let bound = clip * sigma;
    (sigma * z).clamp(-bound, bound)
}

/// Market demand for a given standard-normal draw, floored at zero.
pub fn total_demand_with_draw(avg_price_ratio: f64, model: &DemandModel, sigma: f64, clip: f64, z: f64) -> f64 {
    (model.expected_demand(avg_price_ratio) + clipped_noise(z, sigma, clip)).max(0.0)
}

pub fn total_demand<R: Rng + ?Sized>(
    avg_price_ratio: f64,
    model: &DemandModel,
    sigma: f64,
    clip: f64,
    rng: &mut R,
) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    total_demand_with_draw(avg_price_ratio, model, sigma, clip, z)
}

/// A single marketplace instance with its own noise stream.
#[derive(Debug, Clone)]
pub struct MarketEnv {
    config: MarketConfig,
    demand: DemandModel,
    state: MarketState,
    rng: ChaCha8Rng,
    saturated_actions: u64,
}

impl MarketEnv {
    pub fn new(config: MarketConfig, demand: DemandModel, seed: u64) -> Result<Self, MarketError> {
        config.validate()?;
        if !(demand.base_demand > 0.0) {
            return Err(MarketError::InvalidConfig {
                field: "base_demand",
                reason: "demand model base must be > 0".into(),
            });
        }
        let state = Self::initial_state(&config, &demand);
        Ok(Self {
            config,
            demand,
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
            saturated_actions: 0,
        })
    }

    fn base_share(config: &MarketConfig, demand: &DemandModel) -> f64 {
        demand.base_demand / config.n_sellers as f64
    }

    fn initial_state(config: &MarketConfig, demand: &DemandModel) -> MarketState {
        let n = config.n_sellers;
        let base = Self::base_share(config, demand);
        MarketState {
            t: 0,
            prices: vec![config.reference_price; n],
            inventories: vec![config.initial_inventory; n],
            demand_history: vec![VecDeque::from(vec![base; DEMAND_HISTORY]); n],
            last_shares: vec![1.0 / n as f64; n],
        }
    }

    pub fn config(&self) -> &MarketConfig {
        &self.config
    }

    pub fn demand_model(&self) -> &DemandModel {
        &self.demand
    }

    pub fn state(&self) -> &MarketState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.t >= self.config.horizon
    }

    /// Count of actions that fell outside [-1, 1] and were clamped.
    pub fn saturated_actions(&self) -> u64 {
        self.saturated_actions
    }

    /// Starts a new episode, continuing the noise stream.
    pub fn reset(&mut self) -> Vec<AgentObservation> {
        self.state = Self::initial_state(&self.config, &self.demand);
        self.observations()
    }

    /// Starts a new episode with a fresh noise stream.
    pub fn reset_with_seed(&mut self, seed: u64) -> Vec<AgentObservation> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.reset()
    }

    pub fn observe(&self, agent: usize) -> Result<AgentObservation, MarketError> {
        let n = self.config.n_sellers;
        if agent >= n {
            return Err(MarketError::AgentIndex { index: agent, n });
        }
        let s = &self.state;
        let hist = &s.demand_history[agent];
        let velocity = hist.iter().sum::<f64>() / hist.len() as f64 / Self::base_share(&self.config, &self.demand);
        let inventory = if self.config.initial_inventory > 0.0 {
            s.inventories[agent] / self.config.initial_inventory
        } else {
            0.0
        };
        Ok(AgentObservation([
            s.prices[agent] / self.config.reference_price,
            velocity,
            inventory,
            s.t as f64 / self.config.horizon as f64,
        ]))
    }

    pub fn observations(&self) -> Vec<AgentObservation> {
        (0..self.config.n_sellers)
            .map(|i| self.observe(i).expect("index in range"))
            .collect()
    }

    /// Every agent's observation block in agent order, then the last shares.
    pub fn global_state(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.config.global_state_dim());
        for obs in self.observations() {
            out.extend_from_slice(obs.as_slice());
        }
        out.extend_from_slice(&self.state.last_shares);
        out
    }

    pub fn step(&mut self, joint_action: &[f64]) -> Result<StepOutcome, MarketError> {
        let z: f64 = self.rng.sample(StandardNormal);
        self.step_with_draw(joint_action, z)
    }

    /// Steps with an explicit standard-normal draw for the demand noise.
    pub fn step_with_draw(&mut self, joint_action: &[f64], z: f64) -> Result<StepOutcome, MarketError> {
        let n = self.config.n_sellers;
        if self.is_done() {
            return Err(MarketError::EpisodeDone);
        }
        if joint_action.len() != n {
            return Err(MarketError::ActionCount {
                expected: n,
                found: joint_action.len(),
            });
        }
        if let Some(index) = joint_action.iter().position(|a| !a.is_finite()) {
            return Err(MarketError::NonFiniteAction { index });
        }

        let prices: Vec<f64> = joint_action
            .iter()
            .map(|&a| {
                let (p, saturated) = scale_action(a, &self.config);
                self.saturated_actions += saturated as u64;
                p
            })
            .collect();
        let p_ref = self.config.reference_price;
        let shares = allocate_shares(&prices, self.config.beta, p_ref);
        let avg_ratio: f64 = shares.iter().zip(&prices).map(|(s, p)| s * p / p_ref).sum();
        let market = total_demand_with_draw(
            avg_ratio,
            &self.demand,
            self.config.noise_sigma,
            self.config.noise_clip,
            z,
        );

        let margin = 1.0 - self.config.cost_ratio;
        let mut demands = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        for i in 0..n {
            let d = (shares[i] * market).min(self.state.inventories[i]);
            self.state.inventories[i] -= d;
            let hist = &mut self.state.demand_history[i];
            hist.pop_front();
            hist.push_back(d);
            rewards.push(margin * prices[i] * d);
            demands.push(d);
        }
        self.state.prices.clone_from(&prices);
        self.state.last_shares.clone_from(&shares);
        self.state.t += 1;

        Ok(StepOutcome {
            observations: self.observations(),
            rewards,
            demands,
            prices,
            shares,
            total_demand: market,
            done: self.is_done(),
        })
    }
}
