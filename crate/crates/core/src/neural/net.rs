use rand::Rng;
use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tape::{Tape, Var};
use crate::error::{Result, SyncError};

pub const HIDDEN_WIDTH: usize = 30;

/// Dense layer, weights stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<T = f64> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Real> Linear<T> {
    fn apply(&self, x: &[T]) -> Vec<T> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.biases)
            .map(|(row, &b)| T::affine(row, x, b))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InitScheme {
    /// Weights uniform on `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    #[default]
    UniformFanAverage,
    Zeros,
}

/// Parameters of one weight-generating network:
/// `2(N-1) -> 30 -> 30 -> (N-1)` with sigmoid hidden activations and a
/// softmax restricted to the peers heard above threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightNetParams<T = f64> {
    pub layers: [Linear<T>; 3],
}

impl WeightNetParams<f64> {
    fn shapes(nodes: usize) -> [(usize, usize); 3] {
        let peers = nodes - 1;
        [(2 * peers, HIDDEN_WIDTH), (HIDDEN_WIDTH, HIDDEN_WIDTH), (HIDDEN_WIDTH, peers)]
    }

    pub fn zeros(nodes: usize) -> Self {
        assert!(nodes >= 2, "network needs at least one peer");
        let layers = Self::shapes(nodes).map(|(inputs, outputs)| Linear {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        });
        WeightNetParams { layers }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, nodes: usize, scheme: InitScheme) -> Result<Self> {
        crate::sim_core::check_nodes(nodes)?;
        let mut params = Self::zeros(nodes);
        if scheme == InitScheme::UniformFanAverage {
            for layer in &mut params.layers {
                let bound = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
                for w in &mut layer.weights {
                    *w = rng.random_range(-bound..=bound);
                }
            }
        }
        Ok(params)
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn bias_count(&self) -> usize {
        self.layers.iter().map(|l| l.biases.len()).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    /// Products per inference: one per weight in the dense layers plus one per
    /// output in the final normalization.
    pub fn multiply_count(&self) -> usize {
        self.weight_count() + self.peers()
    }

    /// Flattened parameters: each layer's weights then biases, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(SyncError::ShapeMismatch { expected: self.parameter_count(), actual: flat.len() });
        }
        let mut it = flat.iter().copied();
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Copies the parameters onto `tape` as leaves, in flattened order.
    pub fn lift<'t>(&self, tape: &'t Tape) -> WeightNetParams<Var<'t>> {
        self.map(|&w| tape.var(w))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|w| w.is_finite()))
    }
}

impl<T> WeightNetParams<T> {
    pub fn peers(&self) -> usize {
        self.layers[2].outputs
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> WeightNetParams<U> {
        let layers = [0, 1, 2].map(|i| {
            let l = &self.layers[i];
            Linear {
                inputs: l.inputs,
                outputs: l.outputs,
                weights: l.weights.iter().map(&mut f).collect(),
                biases: l.biases.iter().map(&mut f).collect(),
            }
        });
        WeightNetParams { layers }
    }

    /// All parameters in flattened order.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }
}

impl<T: Real> WeightNetParams<T> {
    pub fn logits(&self, features: &[T]) -> Vec<T> {
        let h1: Vec<T> = self.layers[0].apply(features).into_iter().map(T::sigmoid).collect();
        let h2: Vec<T> = self.layers[1].apply(&h1).into_iter().map(T::sigmoid).collect();
        self.layers[2].apply(&h2)
    }

    /// Weights over the `N-1` peers: softmax, then selection of masked-in
    /// peers, then renormalization to unit sum. Softmax followed by
    /// renormalization over a subset equals a softmax over that subset, which
    /// is how it is evaluated. Masked-out entries are exactly zero.
    pub fn forward(&self, features: &[T], mask: &[bool]) -> Result<Vec<T>> {
        let peers = self.peers();
        if features.len() != self.layers[0].inputs {
            return Err(SyncError::ShapeMismatch { expected: self.layers[0].inputs, actual: features.len() });
        }
        if mask.len() != peers {
            return Err(SyncError::ShapeMismatch { expected: peers, actual: mask.len() });
        }
        if !mask.iter().any(|&m| m) {
            return Err(SyncError::EmptyNeighborhood);
        }
        let z = self.logits(features);
        let shift = z
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v.value())
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<T> = z
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| (v - shift).exp())
            .collect();
        let total = T::sum(&exps);
        let zero = z[0].constant_like(0.0);
        let mut selected = exps.into_iter();
        Ok(mask
            .iter()
            .map(|&m| if m { selected.next().expect("one per mask bit") / total } else { zero })
            .collect())
    }
}

/// `θ <- θ - lr * grad`.
pub fn sgd_step(params: &mut WeightNetParams, grads: &[f64], learning_rate: f64) -> Result<()> {
    if grads.len() != params.parameter_count() {
        return Err(SyncError::ShapeMismatch { expected: params.parameter_count(), actual: grads.len() });
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(SyncError::NonFiniteGradient { index });
    }
    let mut it = grads.iter();
    for layer in &mut params.layers {
        for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
            *w -= learning_rate * it.next().expect("length checked");
        }
    }
    Ok(())
}
