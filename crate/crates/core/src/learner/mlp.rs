//! Fully connected ReLU network with batched forward and reverse passes.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::linalg::{serde_rows, serde_vec};
use crate::{Error, Result};

const OUTPUT_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(with = "serde_rows")]
    pub weight: DMatrix<f64>,
    #[serde(with = "serde_vec")]
    pub bias: DVector<f64>,
}

/// Affine layers with ReLU between them and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Post-activations of every layer input, kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    acts: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// Kaiming-normal hidden layers, zero biases. The output layer is drawn
    /// from `N(0, 0.01/fan_in)` so an untrained network stays near the middle
    /// of its output range.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("bad layer sizes {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let gain = if l == last { OUTPUT_GAIN } else { 2.0 };
                let normal = Normal::new(0.0, (gain / w[0] as f64).sqrt()).expect("positive std");
                Layer {
                    weight: DMatrix::from_fn(w[1], w[0], |_, _| normal.sample(&mut rng)),
                    bias: DVector::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// `n → width → width → out`.
    pub fn two_hidden(n: usize, width: usize, out: usize, seed: u64) -> Result<Self> {
        Self::new(&[n, width, width, out], seed)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: DMatrix::zeros(l.weight.nrows(), l.weight.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.nrows())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameter blocks in a fixed order (weight then bias, layer by layer).
    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().flat_map(|b| b.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                flat.len(),
                self.n_params()
            )));
        }
        let mut rest = flat;
        for block in self.blocks_mut() {
            let (head, tail) = rest.split_at(block.len());
            block.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Forward pass on a batch stored column-wise.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, MlpCache) {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * &a;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            if l + 1 < self.layers.len() {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(std::mem::replace(&mut a, z));
        }
        (a, MlpCache { acts })
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        let (y, _) = self.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()));
        y.column(0).into_owned()
    }

    /// Gradients summed over the batch for upstream `∂L/∂y` (one column per
    /// sample).
    pub fn backward_batch(&self, cache: &MlpCache, upstream: &DMatrix<f64>) -> Mlp {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let a = &cache.acts[l];
            let weight = &delta * a.transpose();
            let bias = delta.column_sum();
            if l > 0 {
                let mut next = layer.weight.tr_mul(&delta);
                next.zip_apply(a, |d, act| {
                    if act <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = next;
            }
            grads.push(Layer { weight, bias });
        }
        grads.reverse();
        Mlp { layers: grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::finite_diff_grad;

    #[test]
    fn zero_weights_return_output_bias() {
        let mut mlp = Mlp::new(&[3, 4, 2], 1).unwrap();
        for block in mlp.blocks_mut() {
            block.fill(0.0);
        }
        mlp.layers[1].bias = DVector::from_row_slice(&[0.3, -2.0]);
        let y = mlp.forward(&DVector::from_row_slice(&[1.0, 2.0, 3.0]));
        assert_eq!(y, DVector::from_row_slice(&[0.3, -2.0]));
    }

    #[test]
    fn single_layer_is_affine() {
        let mut mlp = Mlp::new(&[2, 2], 1).unwrap();
        mlp.layers[0].weight = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        mlp.layers[0].bias = DVector::from_row_slice(&[0.5, -0.5]);
        let y = mlp.forward(&DVector::from_row_slice(&[1.0, -1.0]));
        assert_eq!(y, DVector::from_row_slice(&[-0.5, -1.5]));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mlp = Mlp::new(&[3, 6, 5, 2], 7).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[0.3, -1.0, 0.8, 0.1, -0.5, 0.7]);
        let w = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.25, 2.0]);
        let loss = |flat: &DVector<f64>| {
            let mut m = mlp.clone();
            m.set_flat(flat.as_slice()).unwrap();
            m.forward_batch(&x).0.component_mul(&w).sum()
        };
        let (_, cache) = mlp.forward_batch(&x);
        let analytic = DVector::from_vec(mlp.backward_batch(&cache, &w).to_flat());
        let numeric = finite_diff_grad(loss, &DVector::from_vec(mlp.to_flat()), 1e-6);
        let err = (&analytic - &numeric).norm() / numeric.norm();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn flat_round_trip() {
        let mlp = Mlp::two_hidden(3, 8, 10, 3).unwrap();
        let mut other = Mlp::two_hidden(3, 8, 10, 4).unwrap();
        other.set_flat(&mlp.to_flat()).unwrap();
        assert_eq!(mlp, other);
        assert!(other.set_flat(&[0.0]).is_err());
    }
}
