//! Independent oracles shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use marl_pricing::calibration::DemandModel;
use marl_pricing::nn::{Activation, Layer, Mlp, ParamSlices};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-6;

/// Worst relative error between `analytic` and a central finite difference
/// of `loss` over every parameter of `params`.
pub fn max_fd_error<P, G, F>(params: &P, analytic: &G, loss: F) -> f64
where
    P: ParamSlices + Clone,
    G: ParamSlices,
    F: Fn(&P) -> f64,
{
    let grads = analytic.slices();
    let shapes = params.shapes();
    assert_eq!(shapes, analytic.shapes(), "gradient shape mismatch");
    let mut worst: f64 = 0.0;
    for (k, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let mut plus = params.clone();
            plus.slices_mut()[k][i] += FD_STEP;
            let mut minus = params.clone();
            minus.slices_mut()[k][i] -= FD_STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            let a = grads[k][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

/// Worst relative error of a gradient with respect to a plain vector input.
pub fn max_fd_error_vec<F: Fn(&[f64]) -> f64>(x: &[f64], analytic: &[f64], f: F) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut p = x.to_vec();
        p[i] += FD_STEP;
        let mut m = x.to_vec();
        m[i] -= FD_STEP;
        let numeric = (f(&p) - f(&m)) / (2.0 * FD_STEP);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(FD_FLOOR);
        worst = worst.max(err);
    }
    worst
}

/// Random small network whose layers cycle through tanh, relu and linear.
pub fn random_mlp<R: Rng>(rng: &mut R, offset: usize) -> Mlp {
    let acts = [Activation::Tanh, Activation::Relu, Activation::Linear];
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![rng.random_range(2..=5)];
    for _ in 0..depth {
        sizes.push(rng.random_range(2..=6));
    }
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let mut l = Layer::init(w[0], w[1], acts[(k + offset) % 3], rng);
            l.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            l
        })
        .collect();
    Mlp::new(layers).unwrap()
}

/// Brute-force GAE: `A_t = sum_{l >= 0} (gamma lambda)^l delta_{t+l}`,
/// each residual recomputed from scratch.
pub fn gae_oracle(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            for l in 0..n - t {
                let k = t + l;
                let delta = rewards[k] + gamma * values[k + 1] - values[k];
                sum += (gamma * lambda).powi(l as i32) * delta;
            }
            sum
        })
        .collect()
}

pub fn demand(base: f64, elasticity: f64, reference_price: f64) -> DemandModel {
    DemandModel {
        sku: "SYN".into(),
        base_demand: base,
        elasticity,
        reference_price,
        residual_sigma: 0.0,
        fit_quality: None,
    }
}

pub fn fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}
