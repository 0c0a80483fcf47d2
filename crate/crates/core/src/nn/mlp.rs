//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! A layer computes `y = act(W x + b)` with `W` stored row-major as
//! `(out_dim, in_dim)`. Batched passes take row-per-sample matrices so the
//! heavy lifting goes through `ndarray`'s matrix product.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, ParamSlices};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((out_dim, in_dim), || rng.random_range(-bound..=bound));
        let bias = Array1::from_shape_simple_fn(out_dim, || rng.random_range(-bound..=bound));
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
            activation,
        }
    }
}

/// Layer stack. Construction validates that dimensions chain and values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Post-activation outputs of every layer, input first.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.activations[0]
    }
}

/// Gradients with the same shapes as an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            *w *= factor;
        }
        for b in &mut self.biases {
            *b *= factor;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|&x| x == 0.0))
            && self.biases.iter().all(|b| b.iter().all(|&x| x == 0.0))
    }
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Empty);
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NnError::LayerChain {
                    layer: k + 1,
                    expected: pair[0].out_dim(),
                    found: pair[1].in_dim(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.out_dim() {
                return Err(NnError::Shape(format!(
                    "bias length {} does not match layer width {}",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
        }
        let net = Self { layers };
        if !net.is_finite() {
            return Err(NnError::NonFinite("network parameters"));
        }
        Ok(net)
    }

    /// Builds `sizes[0] -> sizes[1] -> ... ` with `hidden` activation on every
    /// layer but the last, which uses `output`.
    pub fn with_sizes<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if sizes.len() < 2 {
            return Err(NnError::Empty);
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { output } else { hidden };
                Layer::init(sizes[k], sizes[k + 1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|x| x.is_finite()) && l.bias.iter().all(|x| x.is_finite()))
    }

    /// Multiplies the last layer's weights and biases by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weight *= factor;
        last.bias *= factor;
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        if input.len() != self.in_dim() {
            return Err(NnError::InputDim {
                expected: self.in_dim(),
                found: input.len(),
            });
        }
        let mut x: Vec<f64> = input.to_vec();
        for layer in &self.layers {
            let mut y = vec![0.0; layer.out_dim()];
            for (o, out) in y.iter_mut().enumerate() {
                let row = layer.weight.row(o);
                let mut sum = layer.bias[o];
                for (w, xi) in row.iter().zip(&x) {
                    sum += w * xi;
                }
                *out = layer.activation.apply(sum);
            }
            x = y;
        }
        Ok(x)
    }

    /// Batched forward pass, one sample per row.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_batch(input)?;
        let mut x = self.apply_layer(&self.layers[0], input);
        for layer in &self.layers[1..] {
            x = self.apply_layer(layer, x.view());
        }
        Ok(x)
    }

    /// Batched forward pass that keeps every intermediate for [`Mlp::backward`].
    pub fn forward_cached(&self, input: Array2<f64>) -> Result<ForwardCache, NnError> {
        self.check_batch(input.view())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input);
        for layer in &self.layers {
            let next = self.apply_layer(layer, activations.last().unwrap().view());
            activations.push(next);
        }
        Ok(ForwardCache { activations })
    }

    /// Back-propagates `d_output` (dL/d output, one row per sample).
    ///
    /// Parameter gradients are accumulated into `grads` when given; the
    /// gradient with respect to the network input is always returned.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_output: Array2<f64>,
        mut grads: Option<&mut MlpGrads>,
    ) -> Result<Array2<f64>, NnError> {
        if d_output.dim() != cache.output().dim() {
            return Err(NnError::Shape(format!(
                "output gradient {:?} does not match cached output {:?}",
                d_output.dim(),
                cache.output().dim()
            )));
        }
        let mut delta = d_output;
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.activations[k + 1];
            if layer.activation != Activation::Linear {
                ndarray::Zip::from(&mut delta)
                    .and(out)
                    .for_each(|d, &y| *d *= layer.activation.derivative_from_output(y));
            }
            let input = &cache.activations[k];
            if let Some(g) = grads.as_deref_mut() {
                ndarray::linalg::general_mat_mul(1.0, &delta.t(), input, 1.0, &mut g.weights[k]);
                g.biases[k] += &delta.sum_axis(Axis(0));
            }
            delta = delta.dot(&layer.weight);
        }
        Ok(delta)
    }

    /// Loss and parameter gradients for a single input. `loss_fn` maps the
    /// network output to `(loss, dL/d output)`.
    pub fn gradients<F>(&self, input: &[f64], loss_fn: F) -> Result<(f64, MlpGrads), NnError>
    where
        F: FnOnce(&[f64]) -> (f64, Vec<f64>),
    {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).map_err(|e| NnError::Shape(e.to_string()))?;
        let cache = self.forward_cached(x)?;
        let out = cache.output().row(0).to_vec();
        let (loss, d_out) = loss_fn(&out);
        if !loss.is_finite() {
            return Err(NnError::NonFinite("loss"));
        }
        if d_out.len() != out.len() {
            return Err(NnError::Shape(format!(
                "loss gradient has {} entries, network output has {}",
                d_out.len(),
                out.len()
            )));
        }
        let d_out = Array2::from_shape_vec((1, d_out.len()), d_out).map_err(|e| NnError::Shape(e.to_string()))?;
        let mut grads = MlpGrads::zeros_like(self);
        self.backward(&cache, d_out, Some(&mut grads))?;
        Ok((loss, grads))
    }

    fn check_batch(&self, input: ArrayView2<f64>) -> Result<(), NnError> {
        if input.ncols() != self.in_dim() {
            return Err(NnError::InputDim {
                expected: self.in_dim(),
                found: input.ncols(),
            });
        }
        Ok(())
    }

    fn apply_layer(&self, layer: &Layer, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&layer.weight.t());
        z += &layer.bias;
        if layer.activation != Activation::Linear {
            z.mapv_inplace(|v| layer.activation.apply(v));
        }
        z
    }
}

impl ParamSlices for Mlp {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

impl ParamSlices for MlpGrads {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }
}
