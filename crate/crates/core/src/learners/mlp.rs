//! Feed-forward network with logistic hidden units and a linear scalar
//! output, trained on mean squared error with mini-batches.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LearnError;
use crate::features::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden_layers: 7,
            hidden_width: 64,
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::InvalidParams(m.into()));
        if self.hidden_width == 0 && self.hidden_layers > 0 {
            return bad("hidden_width must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive and finite");
        }
        Ok(())
    }
}

/// Fully connected layer; `weights` is `n_out × n_in`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    fn forward(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let w = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            let z: f64 = w.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + self.bias[o];
            out.push(z);
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Hidden layers use the logistic function; the last layer is linear with a
/// single output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<DenseLayer>,
}

impl Network {
    pub fn zeros(n_in: usize, hidden: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = n_in;
        for &h in hidden {
            layers.push(DenseLayer::zeros(prev, h));
            prev = h;
        }
        layers.push(DenseLayer::zeros(prev, 1));
        Self { layers }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn initialized<R: Rng>(n_in: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(n_in, hidden);
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        net
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let mut z = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.forward(&a, &mut z);
            if k < last {
                z.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            std::mem::swap(&mut a, &mut z);
        }
        a[0]
    }

    /// Flattened parameters: for each layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
    }

    /// Mean squared error over `rows` of `x` and its gradient with respect
    /// to [`Network::params`], by backpropagation.
    pub fn loss_and_gradient(&self, x: &Matrix, y: &[f64], rows: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.n_params()];
        let b = rows.len() as f64;
        let last = self.layers.len() - 1;
        let mut loss = 0.0;
        // activations[k] is the input to layer k
        let mut activations: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len() + 1];
        let mut delta = Vec::new();
        let mut next_delta = Vec::new();
        let offsets = self.param_offsets();

        for &r in rows {
            activations[0].clear();
            activations[0].extend_from_slice(x.row(r));
            for (k, layer) in self.layers.iter().enumerate() {
                let (head, tail) = activations.split_at_mut(k + 1);
                layer.forward(&head[k], &mut tail[0]);
                if k < last {
                    tail[0].iter_mut().for_each(|v| *v = sigmoid(*v));
                }
            }
            let err = activations[last + 1][0] - y[r];
            loss += err * err;

            delta.clear();
            delta.push(2.0 * err / b);
            for k in (0..self.layers.len()).rev() {
                let layer = &self.layers[k];
                let input = &activations[k];
                let (w_off, b_off) = offsets[k];
                for o in 0..layer.n_out {
                    let d = delta[o];
                    grad[b_off + o] += d;
                    let g = &mut grad[w_off + o * layer.n_in..w_off + (o + 1) * layer.n_in];
                    for (gi, &a) in g.iter_mut().zip(input) {
                        *gi += d * a;
                    }
                }
                if k == 0 {
                    break;
                }
                next_delta.clear();
                for i in 0..layer.n_in {
                    let back: f64 = (0..layer.n_out)
                        .map(|o| layer.weights[o * layer.n_in + i] * delta[o])
                        .sum();
                    let a = input[i];
                    next_delta.push(back * a * (1.0 - a));
                }
                std::mem::swap(&mut delta, &mut next_delta);
            }
        }
        (loss / b, grad)
    }

    fn param_offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let w = off;
                off += l.weights.len();
                let b = off;
                off += l.bias.len();
                (w, b)
            })
            .collect()
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        let Some(first) = self.layers.first() else {
            return Err("network has no layers".into());
        };
        let mut prev = first.n_in;
        for (k, l) in self.layers.iter().enumerate() {
            if l.n_in != prev {
                return Err(format!("layer {k}: expects {} inputs, gets {prev}", l.n_in));
            }
            if l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(format!("layer {k}: parameter shape mismatch"));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(format!("layer {k}: non-finite parameter"));
            }
            prev = l.n_out;
        }
        if prev != 1 {
            return Err("output layer must have one unit".into());
        }
        Ok(())
    }
}

/// Network plus the affine target normalization it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub network: Network,
    pub target_offset: f64,
    pub target_scale: f64,
}

impl MlpModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.target_offset + self.target_scale * self.network.forward(x)
    }

    /// `x` is expected to be scaled already.
    pub fn fit(x: &Matrix, y: &[f64], params: &MlpParams) -> Result<Self, LearnError> {
        params.validate()?;
        super::check_xy(x, y)?;
        let n = y.len();
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let yn: Vec<f64> = y.iter().map(|v| (v - mean) / scale).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let hidden = vec![params.hidden_width; params.hidden_layers];
        let mut net = Network::initialized(x.n_cols(), &hidden, &mut rng);
        let mut p = net.params();
        let mut m1 = vec![0.0; p.len()];
        let mut m2 = vec![0.0; p.len()];
        let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut step = 0i32;
        let mut order: Vec<usize> = (0..n).collect();

        for epoch in 0..params.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(params.batch_size) {
                let (loss, g) = net.loss_and_gradient(x, &yn, batch);
                if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(LearnError::Diverged { epoch });
                }
                epoch_loss += loss * batch.len() as f64;
                step += 1;
                match params.optimizer {
                    Optimizer::Sgd => {
                        for (pi, gi) in p.iter_mut().zip(&g) {
                            *pi -= params.learning_rate * gi;
                        }
                    }
                    Optimizer::Adam => {
                        let c1 = 1.0 - beta1.powi(step);
                        let c2 = 1.0 - beta2.powi(step);
                        for i in 0..p.len() {
                            m1[i] = beta1 * m1[i] + (1.0 - beta1) * g[i];
                            m2[i] = beta2 * m2[i] + (1.0 - beta2) * g[i] * g[i];
                            p[i] -= params.learning_rate * (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
                        }
                    }
                }
                net.set_params(&p);
            }
            if !(epoch_loss / n as f64).is_finite() {
                return Err(LearnError::Diverged { epoch });
            }
            log::trace!("mlp epoch {epoch}: mse {}", epoch_loss / n as f64);
        }
        Ok(Self {
            network: net,
            target_offset: mean,
            target_scale: scale,
        })
    }
}
