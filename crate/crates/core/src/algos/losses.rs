//! Loss functions with hand-derived gradients shared by the learners.
//!
//! Each `*_loss` returns the scalar loss together with parameter gradients
//! so finite-difference tests can exercise exactly the code the learners run.

use ndarray::{Array2, ArrayView2};

use crate::nn::{gaussian_log_prob, squash_log_jacobian, GaussianPolicy, Mlp, MlpGrads, NnError, ParamSlices};

const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;

/// Gradients shaped like a [`GaussianPolicy`]: mean network, then log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrads {
    pub net: MlpGrads,
    pub log_std: Vec<f64>,
}

impl PolicyGrads {
    pub fn zeros_like(policy: &GaussianPolicy) -> Self {
        Self {
            net: MlpGrads::zeros_like(&policy.mean_net),
            log_std: vec![0.0; policy.head.dim()],
        }
    }
}

impl ParamSlices for PolicyGrads {
    fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.net.slices();
        s.push(&self.log_std);
        s
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.net.slices_mut();
        s.push(&mut self.log_std);
        s
    }
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Derivative of [`clipped_surrogate`] with respect to the ratio.
pub fn clipped_surrogate_grad(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    if ratio * advantage <= clipped * advantage {
        advantage
    } else {
        0.0
    }
}

/// `r + gamma (1 - done) q_next`.
pub fn ddpg_critic_target(reward: f64, done: bool, gamma: f64, q_next: f64) -> f64 {
    let live = if done { 0.0 } else { 1.0 };
    reward + gamma * live * q_next
}

/// `r + gamma (1 - done) (min(q1, q2) - alpha log_prob)`.
pub fn masac_critic_target(
    reward: f64,
    done: bool,
    gamma: f64,
    q1_next: f64,
    q2_next: f64,
    alpha: f64,
    next_log_prob: f64,
) -> f64 {
    let live = if done { 0.0 } else { 1.0 };
    reward + gamma * live * (q1_next.min(q2_next) - alpha * next_log_prob)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpoLossStats {
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub entropy: f64,
}

/// Negative clipped surrogate averaged over a minibatch.
///
/// `pre_tanh` holds the stored pre-squash samples (one row per sample), so
/// the new log-probability is exact for the squashed action that was taken.
pub fn ppo_actor_loss(
    policy: &GaussianPolicy,
    obs: ArrayView2<f64>,
    pre_tanh: ArrayView2<f64>,
    old_log_probs: &[f64],
    advantages: &[f64],
    epsilon: f64,
) -> Result<(f64, PolicyGrads, PpoLossStats), NnError> {
    let b = obs.nrows();
    if pre_tanh.nrows() != b || old_log_probs.len() != b || advantages.len() != b {
        return Err(NnError::Shape("PPO minibatch columns have different lengths".into()));
    }
    let cache = policy.mean_net.forward_cached(obs.to_owned())?;
    let means = cache.output();
    let log_std = policy.head.log_std();
    let mut d_mean = Array2::zeros(means.dim());
    let mut grads = PolicyGrads::zeros_like(policy);
    let mut loss = 0.0;
    let mut clipped = 0usize;
    let mut kl = 0.0;
    for i in 0..b {
        let m = means.row(i);
        let u = pre_tanh.row(i);
        let logp = gaussian_log_prob(m.as_slice().unwrap(), log_std, u.as_slice().unwrap());
        let ratio = (logp - old_log_probs[i]).exp();
        if !ratio.is_finite() {
            return Err(NnError::NonFinite("importance ratio"));
        }
        loss -= clipped_surrogate(ratio, advantages[i], epsilon) / b as f64;
        if (ratio - 1.0).abs() > epsilon {
            clipped += 1;
        }
        kl += (ratio - 1.0) - (logp - old_log_probs[i]);
        // dL/dlogp = -(1/B) dObj/dr * r
        let dl_dlogp = -clipped_surrogate_grad(ratio, advantages[i], epsilon) * ratio / b as f64;
        for k in 0..m.len() {
            let sigma = log_std[k].exp();
            let z = (u[k] - m[k]) / sigma;
            d_mean[[i, k]] = dl_dlogp * z / sigma;
            grads.log_std[k] += dl_dlogp * (z * z - 1.0);
        }
    }
    policy.mean_net.backward(&cache, d_mean, Some(&mut grads.net))?;
    let entropy = log_std.iter().map(|ls| ls + HALF_LN_2PI_E).sum();
    let stats = PpoLossStats {
        clip_fraction: clipped as f64 / b as f64,
        approx_kl: kl / b as f64,
        entropy,
    };
    Ok((loss, grads, stats))
}

/// Mean squared error between critic outputs and targets.
pub fn critic_regression(
    critic: &Mlp,
    input: Array2<f64>,
    targets: ArrayView2<f64>,
) -> Result<(f64, MlpGrads), NnError> {
    let cache = critic.forward_cached(input)?;
    if cache.output().dim() != targets.dim() {
        return Err(NnError::Shape(format!(
            "critic output {:?} vs targets {:?}",
            cache.output().dim(),
            targets.dim()
        )));
    }
    let count = targets.len() as f64;
    let diff = cache.output() - &targets;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
    let d_out = diff * (2.0 / count);
    let mut grads = MlpGrads::zeros_like(critic);
    critic.backward(&cache, d_out, Some(&mut grads))?;
    Ok((loss, grads))
}

/// `-mean Q(x with column action_col replaced by actor(obs))`.
pub fn ddpg_actor_loss(
    actor: &Mlp,
    critic: &Mlp,
    obs: Array2<f64>,
    critic_input: &Array2<f64>,
    action_col: usize,
) -> Result<(f64, MlpGrads), NnError> {
    let b = obs.nrows();
    let a_cache = actor.forward_cached(obs)?;
    let mut x = critic_input.clone();
    x.column_mut(action_col).assign(&a_cache.output().column(0));
    let q_cache = critic.forward_cached(x)?;
    let loss = -q_cache.output().sum() / b as f64;
    let d_q = Array2::from_elem((b, 1), -1.0 / b as f64);
    let d_x = critic.backward(&q_cache, d_q, None)?;
    let d_a = d_x.column(action_col).to_owned().insert_axis(ndarray::Axis(1));
    let mut grads = MlpGrads::zeros_like(actor);
    actor.backward(&a_cache, d_a, Some(&mut grads))?;
    Ok((loss, grads))
}

/// Reparameterised soft actor loss `mean(alpha log pi(a|o) - min(Q1, Q2))`
/// for a one-dimensional action with caller-supplied standard-normal noise.
///
/// Returns `(loss, grads, mean log_prob)`.
pub fn sac_actor_loss(
    policy: &GaussianPolicy,
    critics: [&Mlp; 2],
    obs: Array2<f64>,
    critic_input: &Array2<f64>,
    action_col: usize,
    noise: &[f64],
    alpha: f64,
) -> Result<(f64, PolicyGrads, f64), NnError> {
    let b = obs.nrows();
    if noise.len() != b || policy.head.dim() != 1 {
        return Err(NnError::Shape(
            "soft actor loss expects one noise draw per sample and a scalar action".into(),
        ));
    }
    let cache = policy.mean_net.forward_cached(obs)?;
    let ls = policy.head.log_std()[0];
    let sigma = ls.exp();
    let means = cache.output().column(0).to_owned();
    let pre: Vec<f64> = means.iter().zip(noise).map(|(m, z)| m + sigma * z).collect();
    let actions: Vec<f64> = pre.iter().map(|u| u.tanh()).collect();
    let log_probs: Vec<f64> = pre
        .iter()
        .zip(noise)
        .map(|(&u, &z)| -0.5 * z * z - ls - 0.5 * (2.0 * std::f64::consts::PI).ln() - squash_log_jacobian(u))
        .collect();

    let mut x = critic_input.clone();
    for (i, &a) in actions.iter().enumerate() {
        x[[i, action_col]] = a;
    }
    let c1 = critics[0].forward_cached(x.clone())?;
    let c2 = critics[1].forward_cached(x)?;
    let mut d1 = Array2::zeros((b, 1));
    let mut d2 = Array2::zeros((b, 1));
    let mut loss = 0.0;
    for i in 0..b {
        let (q1, q2) = (c1.output()[[i, 0]], c2.output()[[i, 0]]);
        loss += (alpha * log_probs[i] - q1.min(q2)) / b as f64;
        if q1 <= q2 {
            d1[[i, 0]] = -1.0 / b as f64;
        } else {
            d2[[i, 0]] = -1.0 / b as f64;
        }
    }
    let dx1 = critics[0].backward(&c1, d1, None)?;
    let dx2 = critics[1].backward(&c2, d2, None)?;

    let mut grads = PolicyGrads::zeros_like(policy);
    let mut d_mean = Array2::zeros((b, 1));
    for i in 0..b {
        let a = actions[i];
        let z = noise[i];
        // d(-minQ)/da already carries the 1/B factor
        let dq = dx1[[i, action_col]] + dx2[[i, action_col]];
        let du = (alpha * 2.0 * a) / b as f64 + dq * (1.0 - a * a);
        d_mean[[i, 0]] = du;
        grads.log_std[0] += -alpha / b as f64 + du * sigma * z;
    }
    policy.mean_net.backward(&cache, d_mean, Some(&mut grads.net))?;
    let mean_logp = log_probs.iter().sum::<f64>() / b as f64;
    Ok((loss, grads, mean_logp))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_examples() {
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        assert_eq!(clipped_surrogate(1.0, 2.0, 0.2), 2.0);
        assert_eq!(clipped_surrogate_grad(1.5, 1.0, 0.2), 0.0);
        assert_eq!(clipped_surrogate_grad(0.5, -1.0, 0.2), 0.0);
        assert_eq!(clipped_surrogate_grad(1.5, -1.0, 0.2), -1.0);
        assert_eq!(clipped_surrogate_grad(1.1, 1.0, 0.2), 1.0);
    }

    #[test]
    fn target_examples() {
        assert!((ddpg_critic_target(1.0, false, 0.99, 5.0) - 5.95).abs() < 1e-12);
        assert_eq!(ddpg_critic_target(1.0, true, 0.99, 5.0), 1.0);
        let y = masac_critic_target(1.0, false, 0.99, 5.0, 4.0, 0.2, -1.0);
        assert!((y - (1.0 + 0.99 * 4.2)).abs() < 1e-12);
        assert_eq!(masac_critic_target(1.0, true, 0.99, 5.0, 4.0, 0.2, -1.0), 1.0);
    }
}
