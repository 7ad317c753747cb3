use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{glorot, Head};
use crate::error::{Error, Result};
use crate::types::{softmax, Distribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Dense layer; `weights` is `out_dim × in_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }
}

/// Feed-forward classifier head ending in a softmax over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead {
    layers: Vec<Layer>,
}

/// Per-layer inputs and pre-activations of one forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl MlpHead {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a head needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::invalid(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    i,
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        for layer in &layers {
            if layer.weights.len() != layer.in_dim * layer.out_dim
                || layer.bias.len() != layer.out_dim
            {
                return Err(Error::invalid("layer parameter shapes are inconsistent"));
            }
            if layer
                .weights
                .iter()
                .chain(&layer.bias)
                .any(|x| !x.is_finite())
            {
                return Err(Error::invalid("layer parameters must be finite"));
            }
        }
        Ok(Self { layers })
    }

    /// `input → hidden (ReLU) → classes`, or a single linear layer when
    /// `hidden == 0`, initialized from `seed`.
    pub fn new(input_dim: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims: Vec<(usize, usize, Activation)> = if hidden == 0 {
            vec![(input_dim, classes, Activation::Identity)]
        } else {
            vec![
                (input_dim, hidden, Activation::Relu),
                (hidden, classes, Activation::Identity),
            ]
        };
        let layers = dims
            .into_iter()
            .map(|(i, o, act)| Layer {
                in_dim: i,
                out_dim: o,
                weights: glorot(&mut rng, i, o, i * o),
                bias: vec![0.0; o],
                activation: act,
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(&x.to_vec()).map(|(z, _)| z)
    }

    /// Class distribution for input `x`.
    pub fn classify(&self, x: &[f64]) -> Result<Distribution> {
        let z = self.logits(x)?;
        Distribution::new(softmax(&z))
    }
}

impl Head for MlpHead {
    type Input = Vec<f64>;
    type Cache = MlpCache;

    fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                found: params.len(),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let w = layer.weights.len();
            layer.weights.copy_from_slice(&params[offset..offset + w]);
            offset += w;
            let b = layer.bias.len();
            layer.bias.copy_from_slice(&params[offset..offset + b]);
            offset += b;
        }
        Ok(())
    }

    fn num_outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    fn forward(&self, input: &Vec<f64>) -> Result<(Vec<f64>, MlpCache)> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: input.len(),
            });
        }
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let z = layer.pre_activation(&x);
            let a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: idx });
            }
            cache.inputs.push(x);
            cache.pre.push(z);
            x = a;
        }
        Ok((x, cache))
    }

    fn backward(&self, cache: &MlpCache, d_logits: &[f64], scale: f64, grad: &mut [f64]) {
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let start = *acc;
                *acc += l.num_params();
                Some(start)
            })
            .collect();
        let mut delta_out: Vec<f64> = d_logits.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let delta: Vec<f64> = delta_out
                .iter()
                .zip(&cache.pre[idx])
                .map(|(d, &z)| d * layer.activation.derivative(z))
                .collect();
            let x = &cache.inputs[idx];
            let base = offsets[idx];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[base + o * layer.in_dim..base + (o + 1) * layer.in_dim];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += scale * d * xi;
                }
            }
            let bias_base = base + layer.weights.len();
            for (o, &d) in delta.iter().enumerate() {
                grad[bias_base + o] += scale * d;
            }
            if idx > 0 {
                let mut next = vec![0.0; layer.in_dim];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                delta_out = next;
            }
        }
    }
}
