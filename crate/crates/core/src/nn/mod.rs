//! Minimal feed-forward network stack: MLPs, backprop, Adam, a squashed
//! diagonal-Gaussian policy head and JSON checkpoints.

mod adam;
mod checkpoint;
mod gaussian;
mod mlp;

pub use adam::{soft_update, AdamState};
pub use checkpoint::{NetworkRecord, NetworkSet, CHECKPOINT_VERSION};
pub use gaussian::{
    gaussian_log_prob, sample_action, squash_log_jacobian, squash_with_noise, GaussianHead, GaussianPolicy,
    SampledAction, LOG_STD_MAX, LOG_STD_MIN,
};
pub use mlp::{Activation, ForwardCache, Layer, Mlp, MlpGrads};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("network has no layers")]
    Empty,
    #[error("layer {layer} expects input width {found} but previous layer outputs {expected}")]
    LayerChain {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("input dimension mismatch: expected {expected}, found {found}")]
    InputDim { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Flat views over a parameter set, in a fixed order. Optimizers, soft
/// target updates and checksums operate through this.
pub trait ParamSlices {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn shapes(&self) -> Vec<usize> {
        self.slices().iter().map(|s| s.len()).collect()
    }

    fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

impl ParamSlices for Vec<f64> {
    fn slices(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}

/// Order-sensitive FNV-1a hash of every parameter bit pattern.
pub fn param_checksum<P: ParamSlices + ?Sized>(params: &P) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for s in params.slices() {
        for v in s {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
    }
    h
}
