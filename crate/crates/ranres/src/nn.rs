//! Minimal feed-forward network for the Q-function approximators:
//! rectified-linear hidden layers, linear output head, exact analytic
//! gradients for the squared Bellman error, and plain gradient descent
//! with global-norm clipping.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input length {got} does not match network input {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("network needs at least an input and an output dimension")]
    TooFewDims,
}

/// One dense layer; weights are row-major, one row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
}

/// Fully-connected network with rectified-linear hidden activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Per-layer parameter gradients, same shapes as the network.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub dw: Vec<Vec<f64>>,
    pub db: Vec<Vec<f64>>,
}

impl MlpGrads {
    fn zeros(net: &Mlp) -> Self {
        Self {
            dw: net.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            db: net.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for g in self.dw.iter().chain(self.db.iter()) {
            for v in g {
                sq += v * v;
            }
        }
        sq.sqrt()
    }
}

impl Mlp {
    /// Uniform symmetric init scaled by fan-in plus fan-out; biases zero.
    pub fn new<R: Rng>(dims: &[usize], rng: &mut R) -> Result<Self, NnError> {
        if dims.len() < 2 {
            return Err(NnError::TooFewDims);
        }
        let layers = dims
            .windows(2)
            .map(|pair| {
                let (n_in, n_out) = (pair[0], pair[1]);
                let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                let w = (0..n_in * n_out)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Layer {
                    n_in,
                    n_out,
                    w,
                    b: vec![0.0; n_out],
                }
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self, NnError> {
        if dims.len() < 2 {
            return Err(NnError::TooFewDims);
        }
        let layers = dims
            .windows(2)
            .map(|pair| Layer {
                n_in: pair[0],
                n_out: pair[1],
                w: vec![0.0; pair[0] * pair[1]],
                b: vec![0.0; pair[1]],
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.dims[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Deterministic affine-plus-activation chain.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        if x.len() != self.n_inputs() {
            return Err(NnError::DimMismatch {
                expected: self.n_inputs(),
                got: x.len(),
            });
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, &mut next);
            if i != last {
                for v in &mut next {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass keeping every post-activation layer output.
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.affine(acts.last().unwrap(), &mut out);
            if i != last {
                for v in &mut out {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(out);
        }
        acts
    }

    /// Mean squared error of the chosen-action outputs against their
    /// targets, with the exact gradient. Only the selected output unit of
    /// each sample back-propagates.
    pub fn q_loss_and_grads(
        &self,
        batch: &[(&[f64], usize, f64)],
    ) -> Result<(f64, MlpGrads), NnError> {
        let mut grads = MlpGrads::zeros(self);
        let mut loss = 0.0;
        let scale = 1.0 / batch.len().max(1) as f64;
        for &(state, action, target) in batch {
            if state.len() != self.n_inputs() {
                return Err(NnError::DimMismatch {
                    expected: self.n_inputs(),
                    got: state.len(),
                });
            }
            let acts = self.forward_all(state);
            let q = acts.last().unwrap()[action];
            let err = q - target;
            loss += err * err * scale;

            // Output layer: a single nonzero error unit.
            let g_out = 2.0 * err * scale;
            let last = self.layers.len() - 1;
            let prev_act = &acts[last];
            {
                let layer = &self.layers[last];
                let dw_row = &mut grads.dw[last][action * layer.n_in..(action + 1) * layer.n_in];
                for (d, a) in dw_row.iter_mut().zip(prev_act) {
                    *d += g_out * a;
                }
                grads.db[last][action] += g_out;
            }
            // Delta entering the last hidden layer.
            let mut delta: Vec<f64> = {
                let layer = &self.layers[last];
                let row = &layer.w[action * layer.n_in..(action + 1) * layer.n_in];
                row.iter().map(|w| g_out * w).collect()
            };
            for li in (0..last).rev() {
                let layer = &self.layers[li];
                let act = &acts[li + 1];
                // Rectifier derivative of this layer's own output.
                for (d, a) in delta.iter_mut().zip(act) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
                let input = &acts[li];
                for o in 0..layer.n_out {
                    if delta[o] != 0.0 {
                        let dw_row = &mut grads.dw[li][o * layer.n_in..(o + 1) * layer.n_in];
                        for (d, a) in dw_row.iter_mut().zip(input) {
                            *d += delta[o] * a;
                        }
                        grads.db[li][o] += delta[o];
                    }
                }
                if li > 0 {
                    let mut next_delta = vec![0.0; layer.n_in];
                    for o in 0..layer.n_out {
                        if delta[o] != 0.0 {
                            let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                            for (nd, w) in next_delta.iter_mut().zip(row) {
                                *nd += delta[o] * w;
                            }
                        }
                    }
                    delta = next_delta;
                }
            }
        }
        Ok((loss, grads))
    }

    /// One gradient-descent step with global-norm clipping.
    pub fn apply_grads(&mut self, grads: &MlpGrads, learning_rate: f64, clip_norm: f64) {
        let norm = grads.global_norm();
        let scale = if norm > clip_norm && norm > 0.0 {
            clip_norm / norm
        } else {
            1.0
        };
        let step = learning_rate * scale;
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for (w, g) in layer.w.iter_mut().zip(&grads.dw[li]) {
                *w -= step * g;
            }
            for (b, g) in layer.b.iter_mut().zip(&grads.db[li]) {
                *b -= step * g;
            }
        }
    }

    /// Order-stable digest of all parameters, for change detection.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for layer in &self.layers {
            for v in layer.w.iter().chain(layer.b.iter()) {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}
