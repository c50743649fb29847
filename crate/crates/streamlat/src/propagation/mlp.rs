//! Small dense networks with hand-written forward and backward passes.
//!
//! Everything trainable in this crate is built from these layers, so analytic
//! gradients can be verified end to end with finite differences.

use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("input dim {got} does not match layer input dim {want}")]
    DimMismatch { got: usize, want: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Tanh,
    /// a * tanh(x): output bounded to (-a, a).
    ScaledTanh(f64),
}

impl Activation {
    #[inline]
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
            Activation::ScaledTanh(a) => a * x.tanh(),
        }
    }

    /// Derivative expressed in terms of the pre-activation.
    #[inline]
    fn derivative(&self, pre: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::ScaledTanh(a) => {
                let t = pre.tanh();
                a * (1.0 - t * t)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major out_dim x in_dim.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-layer inputs and pre-activations recorded during a cached forward pass.
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

/// Gradients with the same shape as the network parameters.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn push_flat(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
    }
}

impl Mlp {
    /// Dense network with the given layer sizes and per-layer activations.
    /// `dims` has one more entry than `activations`.
    pub fn new(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Self {
        assert_eq!(dims.len(), activations.len() + 1);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, act)| {
                let (in_dim, out_dim) = (d[0], d[1]);
                // Xavier-style init.
                let scale = (2.0 / (in_dim + out_dim) as f64).sqrt();
                Layer {
                    in_dim,
                    out_dim,
                    weights: (0..in_dim * out_dim).map(|_| scale * rng.gaussian()).collect(),
                    biases: vec![0.0; out_dim],
                    activation: *act,
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for layer in &self.layers {
            debug_assert_eq!(cur.len(), layer.in_dim);
            let mut next = vec![0.0; layer.out_dim];
            for (o, n) in next.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                *n = layer.activation.apply(crate::linalg::dot(row, &cur) + layer.biases[o]);
            }
            cur = next;
        }
        cur
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut cache = MlpCache { inputs: Vec::new(), preacts: Vec::new() };
        let mut cur = x.to_vec();
        for layer in &self.layers {
            cache.inputs.push(cur.clone());
            let mut pre = vec![0.0; layer.out_dim];
            for (o, p) in pre.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                *p = crate::linalg::dot(row, &cur) + layer.biases[o];
            }
            cur = pre.iter().map(|&p| layer.activation.apply(p)).collect();
            cache.preacts.push(pre);
        }
        (cur, cache)
    }

    /// Backward pass. Returns parameter gradients and the input gradient.
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64]) -> (MlpGrads, Vec<f64>) {
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = upstream.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.preacts[li];
            let input = &cache.inputs[li];
            // delta through the activation
            let d_pre: Vec<f64> = delta
                .iter()
                .zip(pre)
                .map(|(d, &p)| d * layer.activation.derivative(p))
                .collect();
            for o in 0..layer.out_dim {
                grads.biases[li][o] += d_pre[o];
                let row = &mut grads.weights[li][o * layer.in_dim..(o + 1) * layer.in_dim];
                for (i, g) in row.iter_mut().enumerate() {
                    *g += d_pre[o] * input[i];
                }
            }
            let mut d_in = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (i, w) in row.iter().enumerate() {
                    d_in[i] += d_pre[o] * w;
                }
            }
            delta = d_in;
        }
        (grads, delta)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn push_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
    }

    pub fn load_params(&mut self, src: &[f64], offset: &mut usize) {
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&src[*offset..*offset + nw]);
            *offset += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&src[*offset..*offset + nb]);
            *offset += nb;
        }
    }

    /// Gradient step with a pre-scaled learning rate (clipping is the
    /// caller's job since it applies to the global gradient norm).
    pub fn apply_grads(&mut self, grads: &MlpGrads, lr: f64) {
        for (li, l) in self.layers.iter_mut().enumerate() {
            for (w, g) in l.weights.iter_mut().zip(&grads.weights[li]) {
                *w -= lr * g;
            }
            for (b, g) in l.biases.iter_mut().zip(&grads.biases[li]) {
                *b -= lr * g;
            }
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Backward through softmax: given grad wrt probabilities, return grad wrt
/// logits.
pub fn softmax_backward(probs: &[f64], upstream: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(upstream).map(|(p, u)| p * u).sum();
    probs.iter().zip(upstream).map(|(p, u)| p * (u - dot)).collect()
}
