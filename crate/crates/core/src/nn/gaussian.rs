//! Tanh-squashed diagonal Gaussian policies.
//!
//! A pre-squash sample `u = mean + sigma * z` maps to the action
//! `a = tanh(u)`, so every component lies strictly inside (-1, 1). The log
//! density of `a` carries the change-of-variables term `-sum ln(1 - tanh(u)^2)`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Activation, Mlp, NnError, ParamSlices};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// State-independent learned log standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    log_std: Vec<f64>,
}

impl GaussianHead {
    pub fn new(log_std: Vec<f64>) -> Self {
        let mut head = Self { log_std };
        head.clamp();
        head
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn clamp(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }
}

impl ParamSlices for GaussianHead {
    fn slices(&self) -> Vec<&[f64]> {
        vec![self.log_std.as_slice()]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.log_std.as_mut_slice()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledAction {
    pub action: Vec<f64>,
    pub pre_tanh: Vec<f64>,
    pub log_prob: f64,
}

/// `ln(1 - tanh(u)^2)` evaluated without cancellation for large `|u|`.
pub fn squash_log_jacobian(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Log density of `tanh(pre_tanh)` under the squashed Gaussian.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], pre_tanh: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(pre_tanh)
        .map(|((&m, &ls), &u)| {
            let ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let z = (u - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI - squash_log_jacobian(u)
        })
        .sum()
}

/// Squashes `mean + sigma * noise` for caller-supplied standard-normal noise.
pub fn squash_with_noise(head: &GaussianHead, mean: &[f64], noise: &[f64]) -> SampledAction {
    let pre_tanh: Vec<f64> = mean
        .iter()
        .zip(head.log_std())
        .zip(noise)
        .map(|((&m, &ls), &z)| m + ls.exp() * z)
        .collect();
    let action = pre_tanh.iter().map(|u| u.tanh()).collect();
    let log_prob = gaussian_log_prob(mean, head.log_std(), &pre_tanh);
    SampledAction {
        action,
        pre_tanh,
        log_prob,
    }
}

pub fn sample_action<R: Rng + ?Sized>(head: &GaussianHead, mean: &[f64], rng: &mut R) -> SampledAction {
    let noise: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
    squash_with_noise(head, mean, &noise)
}

/// Mean network plus learned log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub head: GaussianHead,
}

impl GaussianPolicy {
    /// obs -> 128 tanh -> 128 tanh -> linear mean, final layer scaled by 0.01,
    /// log-std initialised to ln(0.5).
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let mut mean_net = Mlp::with_sizes(
            &[obs_dim, hidden, hidden, action_dim],
            Activation::Tanh,
            Activation::Linear,
            rng,
        )?;
        mean_net.scale_output_layer(0.01);
        Ok(Self {
            mean_net,
            head: GaussianHead::new(vec![0.5f64.ln(); action_dim]),
        })
    }

    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>, NnError> {
        self.mean_net.forward(obs)
    }

    /// Exploration-free action: `tanh(mean)`.
    pub fn deterministic(&self, obs: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.mean(obs)?.into_iter().map(f64::tanh).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<SampledAction, NnError> {
        let mean = self.mean(obs)?;
        Ok(sample_action(&self.head, &mean, rng))
    }
}

impl ParamSlices for GaussianPolicy {
    fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.mean_net.slices();
        s.extend(self.head.slices());
        s
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.mean_net.slices_mut();
        s.extend(self.head.slices_mut());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_variance_returns_squashed_mean() {
        let head = GaussianHead::new(vec![-20.0, -20.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_action(&head, &[0.3, -1.1], &mut rng);
        assert!((s.action[0] - 0.3f64.tanh()).abs() < 1e-7);
        assert!((s.action[1] - (-1.1f64).tanh()).abs() < 1e-7);
    }

    #[test]
    fn density_at_mode() {
        let d = 3;
        let head = GaussianHead::new(vec![0.0; d]);
        let s = squash_with_noise(&head, &vec![0.0; d], &vec![0.0; d]);
        assert_eq!(s.action, vec![0.0; d]);
        let expected = d as f64 * (-0.5 * (2.0 * std::f64::consts::PI).ln());
        assert!((s.log_prob - expected).abs() < 1e-12);
    }

    #[test]
    fn log_std_is_clamped() {
        let head = GaussianHead::new(vec![-50.0, 9.0]);
        assert_eq!(head.log_std(), &[LOG_STD_MIN, LOG_STD_MAX]);
    }

    #[test]
    fn squash_jacobian_is_stable() {
        for u in [-40.0, -5.0, -0.3, 0.0, 0.7, 6.0, 40.0] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            let stable = squash_log_jacobian(u);
            if direct.is_finite() && u.abs() < 10.0 {
                assert!((direct - stable).abs() < 1e-9, "u={u}");
            }
            assert!(stable.is_finite());
        }
    }

    #[test]
    fn actions_stay_inside_the_open_interval() {
        let head = GaussianHead::new(vec![1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let s = sample_action(&head, &[0.5], &mut rng);
            assert!(s.action[0] > -1.0 && s.action[0] < 1.0);
            assert!(s.log_prob.is_finite());
        }
    }

    #[test]
    fn same_stream_same_actions() {
        let mut r1 = ChaCha8Rng::seed_from_u64(77);
        let mut r2 = ChaCha8Rng::seed_from_u64(77);
        let mut init = ChaCha8Rng::seed_from_u64(0);
        let p = GaussianPolicy::new(4, 1, 16, &mut init).unwrap();
        for _ in 0..20 {
            let a = p.sample(&[0.1, 0.2, 0.3, 0.4], &mut r1).unwrap();
            let b = p.sample(&[0.1, 0.2, 0.3, 0.4], &mut r2).unwrap();
            assert_eq!(a.action[0].to_bits(), b.action[0].to_bits());
        }
    }

    #[test]
    fn density_integrates_to_one() {
        // Uniform importance sampling over (-1, 1): integral = 2 * E[p(a)].
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for (mean, ls) in [(0.0, 0.0), (0.4, -0.7), (-0.3, 0.5f64.ln())] {
            let n = 200_000;
            let mut acc = 0.0;
            for _ in 0..n {
                let a: f64 = rng.random_range(-1.0..1.0);
                let u = a.atanh();
                acc += gaussian_log_prob(&[mean], &[ls], &[u]).exp();
            }
            let integral = 2.0 * acc / n as f64;
            assert!((integral - 1.0).abs() < 0.02, "mean={mean} ls={ls} integral={integral}");
        }
    }
}
