//! JSON checkpoint format.
//!
//! ```json
//! {
//!   "version": 1,
//!   "algorithm": "mappo",
//!   "episode": 400,
//!   "networks": [
//!     {
//!       "name": "actor_0",
//!       "layers": [{"in_dim": 4, "out_dim": 128, "activation": "tanh"}, ...],
//!       "params": [/* W0 row-major, b0, W1, b1, ... */],
//!       "log_std": [-0.69]
//!     }
//!   ]
//! }
//! ```
//!
//! `log_std` is present only for Gaussian policies.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, GaussianHead, GaussianPolicy, Layer, Mlp, NnError, ParamSlices};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub name: String,
    pub layers: Vec<LayerShape>,
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_std: Option<Vec<f64>>,
}

impl NetworkRecord {
    pub fn from_mlp(name: impl Into<String>, net: &Mlp) -> Self {
        Self {
            name: name.into(),
            layers: net
                .layers()
                .iter()
                .map(|l| LayerShape {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    activation: l.activation,
                })
                .collect(),
            params: net.flat(),
            log_std: None,
        }
    }

    pub fn from_policy(name: impl Into<String>, policy: &GaussianPolicy) -> Self {
        let mut rec = Self::from_mlp(name, &policy.mean_net);
        rec.log_std = Some(policy.head.log_std().to_vec());
        rec
    }

    pub fn to_mlp(&self) -> Result<Mlp, NnError> {
        let expected: usize = self.layers.iter().map(|l| l.in_dim * l.out_dim + l.out_dim).sum();
        if expected != self.params.len() {
            return Err(NnError::Checkpoint(format!(
                "network '{}' declares {} parameters but stores {}",
                self.name,
                expected,
                self.params.len()
            )));
        }
        let mut offset = 0;
        let mut layers = Vec::with_capacity(self.layers.len());
        for shape in &self.layers {
            let nw = shape.in_dim * shape.out_dim;
            let weight =
                Array2::from_shape_vec((shape.out_dim, shape.in_dim), self.params[offset..offset + nw].to_vec())
                    .map_err(|e| NnError::Checkpoint(e.to_string()))?;
            offset += nw;
            let bias = Array1::from(self.params[offset..offset + shape.out_dim].to_vec());
            offset += shape.out_dim;
            layers.push(Layer {
                weight,
                bias,
                activation: shape.activation,
            });
        }
        Mlp::new(layers)
    }

    pub fn to_policy(&self) -> Result<GaussianPolicy, NnError> {
        let log_std = self
            .log_std
            .clone()
            .ok_or_else(|| NnError::Checkpoint(format!("network '{}' has no log_std", self.name)))?;
        Ok(GaussianPolicy {
            mean_net: self.to_mlp()?,
            head: GaussianHead::new(log_std),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSet {
    pub version: u32,
    pub algorithm: String,
    pub episode: usize,
    pub networks: Vec<NetworkRecord>,
}

impl NetworkSet {
    pub fn new(algorithm: impl Into<String>, episode: usize) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            algorithm: algorithm.into(),
            episode,
            networks: Vec::new(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&NetworkRecord, NnError> {
        self.networks
            .iter()
            .find(|n| n.name == name)
            .ok_or_else(|| NnError::Checkpoint(format!("missing network '{name}'")))
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let text = serde_json::to_string(self).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
        let set: Self = serde_json::from_str(&text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if set.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                set.version
            )));
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let policy = GaussianPolicy::new(4, 1, 8, &mut rng).unwrap();
        let critic = Mlp::with_sizes(&[5, 6, 6, 1], Activation::Relu, Activation::Linear, &mut rng).unwrap();
        let mut set = NetworkSet::new("masac", 12);
        set.networks.push(NetworkRecord::from_policy("actor_0", &policy));
        set.networks.push(NetworkRecord::from_mlp("critic_0", &critic));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        set.save(&path).unwrap();
        let back = NetworkSet::load(&path).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.get("actor_0").unwrap().to_policy().unwrap(), policy);
        assert_eq!(back.get("critic_0").unwrap().to_mlp().unwrap(), critic);
    }

    #[test]
    fn param_count_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::with_sizes(&[2, 3, 1], Activation::Tanh, Activation::Linear, &mut rng).unwrap();
        let mut rec = NetworkRecord::from_mlp("x", &net);
        rec.params.pop();
        assert!(rec.to_mlp().is_err());
    }
}
