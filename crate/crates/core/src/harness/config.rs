use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::algos::{Algorithm, Hyperparams};
use crate::calibration::{DemandModel, DemandModelFile};
use crate::market::MarketConfig;

/// Demand models fitted from the bundled transaction sample.
pub const BUNDLED_DEMAND_MODEL: &str = include_str!("../../fixtures/demand_model.json");

/// Market settings as written in a config file. Anything left out takes the
/// simulator default, except `reference_price` and `noise_sigma`, which come
/// from the demand model (its reference price and residual std).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketOverrides {
    pub n_sellers: Option<usize>,
    pub horizon: Option<usize>,
    pub price_band: Option<f64>,
    pub beta: Option<f64>,
    pub cost_ratio: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub noise_clip: Option<f64>,
    pub reference_price: Option<f64>,
    pub initial_inventory: Option<f64>,
}

impl MarketOverrides {
    pub fn resolve(&self, demand: &DemandModel) -> MarketConfig {
        let d = MarketConfig::default();
        MarketConfig {
            n_sellers: self.n_sellers.unwrap_or(d.n_sellers),
            horizon: self.horizon.unwrap_or(d.horizon),
            price_band: self.price_band.unwrap_or(d.price_band),
            beta: self.beta.unwrap_or(d.beta),
            cost_ratio: self.cost_ratio.unwrap_or(d.cost_ratio),
            noise_sigma: self.noise_sigma.unwrap_or(demand.residual_sigma),
            noise_clip: self.noise_clip.unwrap_or(d.noise_clip),
            reference_price: self.reference_price.unwrap_or(demand.reference_price),
            initial_inventory: self.initial_inventory.unwrap_or(d.initial_inventory),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Demand-model JSON; the bundled fixture when absent.
    pub demand_model: Option<PathBuf>,
    /// SKU to simulate; the parameter average over all SKUs when absent.
    pub sku: Option<String>,
    pub output_dir: PathBuf,
    /// Parallel (algorithm, seed) runs.
    pub workers: usize,
    /// Extra checkpoints every this many episodes (0: initial and final only).
    pub checkpoint_interval: usize,
    pub market: MarketOverrides,
    pub hyper: Hyperparams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithms: Algorithm::ALL.to_vec(),
            seeds: (0..10).collect(),
            episodes: 400,
            eval_interval: 20,
            eval_episodes: 3,
            demand_model: None,
            sku: None,
            output_dir: PathBuf::from("runs"),
            workers: 1,
            checkpoint_interval: 0,
            market: MarketOverrides::default(),
            hyper: Hyperparams::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: Self = toml::from_str(&text).map_err(|e| HarnessError::ConfigParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = &config.demand_model {
            if p.is_relative() {
                config.demand_model = Some(base.join(p));
            }
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| Err(HarnessError::Config(msg.to_string()));
        if self.algorithms.is_empty() {
            return bad("algorithms must not be empty");
        }
        if self.algorithms.iter().collect::<HashSet<_>>().len() != self.algorithms.len() {
            return bad("algorithms must be distinct");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct");
        }
        if self.episodes == 0 {
            return bad("episodes must be >= 1");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be >= 1");
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be >= 1");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        self.hyper.validate()?;
        Ok(())
    }

    pub fn demand_file(&self) -> Result<DemandModelFile, HarnessError> {
        match &self.demand_model {
            Some(path) => {
                if !path.is_file() {
                    return Err(HarnessError::MissingFile(path.clone()));
                }
                Ok(DemandModelFile::load(path)?)
            }
            None => Ok(DemandModelFile::from_json(BUNDLED_DEMAND_MODEL)?),
        }
    }

    pub fn demand(&self) -> Result<DemandModel, HarnessError> {
        Ok(self.demand_file()?.select(self.sku.as_deref())?)
    }

    /// Fully resolved market for this experiment.
    pub fn market_config(&self) -> Result<MarketConfig, HarnessError> {
        let market = self.market.resolve(&self.demand()?);
        market.validate().map_err(crate::algos::AlgoError::from)?;
        Ok(market)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_protocol() {
        let c = ExperimentConfig::default();
        assert_eq!(c.seeds, (0..10).collect::<Vec<u64>>());
        assert_eq!((c.episodes, c.eval_interval, c.eval_episodes), (400, 20, 3));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = ExperimentConfig {
            eval_interval: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.eval_interval = 20;
        c.seeds = vec![1, 1];
        assert!(c.validate().is_err());
        c.seeds = vec![1];
        c.eval_episodes = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn market_defaults_come_from_demand() {
        let c = ExperimentConfig::default();
        let d = c.demand().unwrap();
        let m = c.market_config().unwrap();
        assert_eq!(m.reference_price, d.reference_price);
        assert_eq!(m.noise_sigma, d.residual_sigma);
        assert_eq!(m.cost_ratio, 0.7);
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            algorithms = ["mappo", "iddpg"]
            seeds = [0, 3]
            episodes = 40
            sku = "22423"
            [market]
            beta = 5.0
            [hyper]
            learning_rate = 1e-3
        "#;
        let c: ExperimentConfig = toml::from_str(text).unwrap();
        assert_eq!(c.algorithms, vec![Algorithm::Mappo, Algorithm::Iddpg]);
        assert_eq!(c.eval_interval, 20);
        assert_eq!(c.market.beta, Some(5.0));
        assert_eq!(c.hyper.learning_rate, 1e-3);
        assert_eq!(c.demand().unwrap().sku, "22423");
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1").is_err());
    }
}
