mod common;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use marl_pricing::algos::{critic_regression, ddpg_actor_loss, sac_actor_loss};
use marl_pricing::nn::{Activation, GaussianHead, GaussianPolicy, Mlp};

use common::*;

fn actor(rng: &mut ChaCha8Rng, obs: usize, out: Activation) -> Mlp {
    Mlp::with_sizes(&[obs, 5, 1], Activation::Tanh, out, rng).unwrap()
}

fn critic(rng: &mut ChaCha8Rng, input: usize) -> Mlp {
    Mlp::with_sizes(&[input, 6, 6, 1], Activation::Relu, Activation::Linear, rng).unwrap()
}

#[test]
fn critic_regression_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let net = critic(&mut rng, 4);
        let x = Array2::from_shape_fn((7, 4), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((7, 1), |_| rng.random_range(-2.0..2.0));
        let (_, g) = critic_regression(&net, x.clone(), y.view()).unwrap();
        let err = max_fd_error(&net, &g, |n| critic_regression(n, x.clone(), y.view()).unwrap().0);
        assert!(err < FD_TOLERANCE, "relative error {err}");
    }
}

#[test]
fn deterministic_actor_loss_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..20 {
        let pi = actor(&mut rng, 3, Activation::Tanh);
        let q = critic(&mut rng, 5);
        let obs = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let x = Array2::from_shape_fn((6, 5), |_| rng.random_range(-1.0..1.0));
        let col = trial % 5;
        let (_, g) = ddpg_actor_loss(&pi, &q, obs.clone(), &x, col).unwrap();
        let err = max_fd_error(&pi, &g, |p| ddpg_actor_loss(p, &q, obs.clone(), &x, col).unwrap().0);
        assert!(err < FD_TOLERANCE, "relative error {err}");
    }
}

#[test]
fn soft_actor_loss_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let policy = GaussianPolicy {
            mean_net: actor(&mut rng, 3, Activation::Linear),
            head: GaussianHead::new(vec![rng.random_range(-1.5..0.0)]),
        };
        let q1 = critic(&mut rng, 4);
        let q2 = critic(&mut rng, 4);
        let obs = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let x = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
        let noise: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
        let alpha = rng.random_range(0.05..0.5);
        let (_, g, _) = sac_actor_loss(&policy, [&q1, &q2], obs.clone(), &x, 3, &noise, alpha).unwrap();
        let err = max_fd_error(&policy, &g, |p| {
            sac_actor_loss(p, [&q1, &q2], obs.clone(), &x, 3, &noise, alpha)
                .unwrap()
                .0
        });
        assert!(err < FD_TOLERANCE, "relative error {err}");
    }
}
