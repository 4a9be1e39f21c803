//! Dense ReLU network, Adam, stable loss primitives and a finite-difference
//! gradient checker.
//!
//! Networks are batched: inputs are `(batch, in)` matrices and gradients are
//! summed over the batch rows, so callers scale the output gradient by
//! `1 / batch` to get mean losses.

mod adam;
mod gradcheck;
mod loss;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{gradient_check, numeric_gradient, relative_error};
pub use loss::{
    expectile_grad, expectile_loss, log_softmax, log_sum_exp, masked_log_softmax, softmax,
    softmax_cross_entropy,
};

/// Hidden width of the standard network.
pub const HIDDEN: usize = 256;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `(in, out)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Affine layers with ReLU between them and identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Layer inputs, one per layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Mlp {
    /// Uniform fan-in initialization: every weight and bias of a layer with
    /// `n` inputs is drawn from `U(-1/√n, 1/√n)`.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "network dims must have at least two positive entries, got {dims:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((w[0], w[1]), || {
                    rng.gen_range(-bound..bound)
                });
                let bias = Array1::from_shape_simple_fn(w[1], || rng.gen_range(-bound..bound));
                Layer { weight, bias }
            })
            .collect();
        Ok(Self { layers })
    }

    /// `in → 256 → 256 → out`.
    pub fn standard(input: usize, output: usize, seed: u64) -> Result<Self> {
        Self::new(&[input, HIDDEN, HIDDEN, output], seed)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyInput);
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: l.weight.ncols(),
                    got: l.bias.len(),
                });
            }
            if let Some(next) = layers.get(i + 1) {
                if next.weight.nrows() != l.weight.ncols() {
                    return Err(Error::DimensionMismatch {
                        expected: l.weight.ncols(),
                        got: next.weight.nrows(),
                    });
                }
            }
        }
        Ok(Self { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].weight.nrows()];
        d.extend(self.layers.iter().map(|l| l.weight.ncols()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.output)
    }

    /// Forward pass on a single observation.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.weight);
            z += &l.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut a, z));
        }
        Ok(ForwardCache { inputs, output: a })
    }

    /// Reverse-mode gradients of `Σ output_grad ⊙ output`, summed over the
    /// batch.
    pub fn backward(&self, cache: &ForwardCache, output_grad: ArrayView2<f64>) -> Result<Mlp> {
        if output_grad.dim() != cache.output.dim() {
            return Err(Error::DimensionMismatch {
                expected: cache.output.len(),
                got: output_grad.len(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.to_owned();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            grads.push(Layer {
                weight: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if i > 0 {
                let mut upstream = delta.dot(&l.weight.t());
                // `input` is the ReLU output of the previous layer; its zero
                // entries are exactly where the pre-activation was ≤ 0.
                Zip::from(&mut upstream).and(input).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = upstream;
            }
        }
        grads.reverse();
        Ok(Mlp { layers: grads })
    }

    /// Every parameter, layer by layer, weights (row-major) before biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend(l.weight.iter());
            v.extend(l.bias.iter());
        }
        v
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::LengthMismatch(self.num_params(), values.len()));
        }
        let mut it = values.iter();
        for p in self.params_mut() {
            *p = *it.next().expect("length checked");
        }
        Ok(())
    }

    pub fn from_flat(dims: &[usize], values: &[f64]) -> Result<Self> {
        let mut net = Self::new(dims, 0)?;
        net.set_flat(values)?;
        Ok(net)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.params().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Mlp, scale: f64) -> Result<()> {
        self.check_same_shape(other)?;
        for (p, &g) in self.params_mut().zip(other.params()) {
            *p += scale * g;
        }
        Ok(())
    }

    /// Polyak averaging: `self ← (1 − τ)·self + τ·other`.
    pub fn soft_update(&mut self, other: &Mlp, tau: f64) -> Result<()> {
        self.check_same_shape(other)?;
        for (p, &o) in self.params_mut().zip(other.params()) {
            *p += tau * (o - *p);
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &Mlp) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::InvalidConfig(format!(
                "network shapes differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            dims: self.dims(),
            params: self.flat(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                c.version
            )));
        }
        Self::from_flat(&c.dims, &c.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(&self.to_checkpoint())?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&serde_json::from_slice(&bytes)?)
    }
}

/// Versioned network file: layer dims and the flat parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub dims: Vec<usize>,
    pub params: Vec<f64>,
}

impl Serialize for Mlp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_checkpoint().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mlp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let c = Checkpoint::deserialize(d)?;
        Mlp::from_checkpoint(&c).map_err(serde::de::Error::custom)
    }
}

/// Stack observation rows into a `(batch, dim)` matrix.
pub fn batch_matrix<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        if r.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        data.extend_from_slice(r);
        n += 1;
    }
    Array2::from_shape_vec((n, dim), data).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn toy() -> Mlp {
        // 2-2-1: h = relu(W1ᵀx + b1), y = W2ᵀh + b2.
        Mlp::from_layers(vec![
            Layer {
                weight: array![[1.0, -1.0], [2.0, 0.5]],
                bias: array![0.5, -1.0],
            },
            Layer {
                weight: array![[1.5], [-2.0]],
                bias: array![0.25],
            },
        ])
        .unwrap()
    }

    #[test]
    fn standard_head_parameter_count() {
        assert_eq!(Mlp::standard(768, 11, 0).unwrap().num_params(), 265_483);
        assert_eq!(Mlp::standard(768, 1, 0).unwrap().num_params(), 262_913);
    }

    #[test]
    fn toy_forward_by_hand() {
        // x = (1, 2): z1 = (1 + 4 + 0.5, −1 + 1 − 1) = (5.5, −1) → h = (5.5, 0);
        // y = 1.5·5.5 + 0.25 = 8.5.
        let y = toy().forward_one(&[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![8.5]);
        // x = (−1, 0): z1 = (−0.5, 0) → h = (0, 0); y = 0.25.
        assert_eq!(toy().forward_one(&[-1.0, 0.0]).unwrap(), vec![0.25]);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut net = Mlp::new(&[5, 4, 3], 1).unwrap();
        net.set_flat(&vec![0.0; net.num_params()]).unwrap();
        assert_eq!(net.forward_one(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn wrong_input_dim_is_rejected() {
        let net = Mlp::new(&[3, 2], 0).unwrap();
        assert!(matches!(
            net.forward_one(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = Mlp::new(&[16, 8, 2], 3).unwrap();
        assert_eq!(a, Mlp::new(&[16, 8, 2], 3).unwrap());
        assert_ne!(a, Mlp::new(&[16, 8, 2], 4).unwrap());
        assert!(a.layers()[0].weight.iter().all(|w| w.abs() < 0.25));
        assert!(a.layers()[1].weight.iter().all(|w| w.abs() < 1.0 / 8f64.sqrt()));
    }

    #[test]
    fn toy_backward_by_hand() {
        let net = toy();
        let x = array![[1.0, 2.0]];
        let cache = net.forward_cached(x.view()).unwrap();
        let g = net.backward(&cache, array![[1.0]].view()).unwrap();
        // dy/dW2 = h = (5.5, 0); dy/db2 = 1; only the active unit passes
        // gradient: dy/dW1[:,0] = 1.5·x, dy/db1 = (1.5, 0).
        assert_eq!(g.layers()[1].weight, array![[5.5], [0.0]]);
        assert_eq!(g.layers()[1].bias, array![1.0]);
        assert_eq!(g.layers()[0].weight, array![[1.5, 0.0], [3.0, 0.0]]);
        assert_eq!(g.layers()[0].bias, array![1.5, 0.0]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let net = Mlp::new(&[4, 6, 3], 2).unwrap();
        let x = Array2::from_elem((5, 4), 0.3);
        let cache = net.forward_cached(x.view()).unwrap();
        let g = net.backward(&cache, Array2::zeros((5, 3)).view()).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_regime_matches_least_squares_gradient() {
        // Positive weights, biases and inputs keep every ReLU active, so the
        // net is y = xᵀA + c with A = W1·W2, and the squared-error gradient
        // for W2 is hᵀ(y − t).
        let mut net = Mlp::new(&[3, 4, 1], 5).unwrap();
        let flat: Vec<f64> = net.flat().iter().map(|v| v.abs() + 0.1).collect();
        net.set_flat(&flat).unwrap();
        let x = array![[0.2, 0.4, 0.1], [1.0, 0.3, 0.5]];
        let t = array![[1.0], [-2.0]];
        let cache = net.forward_cached(x.view()).unwrap();
        let resid = &cache.output - &t;
        let g = net.backward(&cache, resid.view()).unwrap();
        let l = &net.layers()[0];
        let h = x.dot(&l.weight) + &l.bias;
        let expected_w2 = h.t().dot(&resid);
        let expected_w1 = x.t().dot(&resid.dot(&net.layers()[1].weight.t()));
        for (a, b) in g.layers()[1].weight.iter().zip(expected_w2.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in g.layers()[0].weight.iter().zip(expected_w1.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..5 {
            let net = Mlp::new(&[6, 5, 4, 3], seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x = Array2::from_shape_simple_fn((4, 6), || rng.gen_range(-1.0..1.0));
            let w = Array2::from_shape_simple_fn((4, 3), || rng.gen_range(-1.0..1.0));
            let err = gradient_check(&net, |n| {
                let cache = n.forward_cached(x.view())?;
                let value = (&cache.output * &w).sum();
                Ok((value, n.backward(&cache, w.view())?))
            })
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn flat_round_trip_and_checkpoint() {
        let net = Mlp::new(&[7, 5, 2], 9).unwrap();
        let back = Mlp::from_flat(&net.dims(), &net.flat()).unwrap();
        assert_eq!(back, net);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        net.save(&path).unwrap();
        assert_eq!(Mlp::load(&path).unwrap(), net);
        let mut c = net.to_checkpoint();
        c.version = 99;
        assert!(Mlp::from_checkpoint(&c).is_err());
        c.version = CHECKPOINT_VERSION;
        c.params.pop();
        assert!(Mlp::from_checkpoint(&c).is_err());
    }

    #[test]
    fn soft_update_interpolates() {
        let mut a = Mlp::new(&[2, 2], 1).unwrap();
        let b = Mlp::new(&[2, 2], 2).unwrap();
        let (fa, fb) = (a.flat(), b.flat());
        a.soft_update(&b, 0.25).unwrap();
        for ((x, y), z) in fa.iter().zip(&fb).zip(a.flat()) {
            assert_abs_diff_eq!(z, 0.75 * x + 0.25 * y, epsilon = 1e-15);
        }
        assert!(a.soft_update(&Mlp::new(&[2, 3], 0).unwrap(), 0.5).is_err());
    }
}
