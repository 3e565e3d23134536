//! Multi-layer perceptrons with ReLU hidden layers and reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::rng::RngStream;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

// Keeps sigmoid outputs strictly inside (0, 1) in floating point.
const SIGMOID_EPS: f64 = 1e-15;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(SIGMOID_EPS, 1.0 - SIGMOID_EPS)
}

/// Weights are stored `(out × in)`, one matrix per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    output: OutputActivation,
}

/// Pre- and post-activation values recorded by [`MlpParams::forward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    layer_sizes: Vec<usize>,
    // activations[0] is the input batch; activations[l] the output of layer l.
    activations: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].rows()
    }
}

/// Gradients (or any other quantity) shaped exactly like an [`MlpParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            for (a, b) in w.data_mut().iter_mut().zip(o.data()) {
                *a += b;
            }
        }
        for (bias, o) in self.biases.iter_mut().zip(&other.biases) {
            for (a, b) in bias.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            w.map_inplace(|v| v * factor);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Iterates over every scalar, weights first then biases, layer by layer.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.data().iter().chain(b.iter()).copied())
    }

    /// Index of the first layer holding a non-finite value.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        (0..self.weights.len()).find(|&l| {
            !self.weights[l].is_finite() || self.biases[l].iter().any(|v| !v.is_finite())
        })
    }
}

impl MlpParams {
    /// He-style fan-in uniform initialization, zero biases.
    ///
    /// `layer_sizes` lists input, hidden and output widths; at least one
    /// hidden layer is required.
    pub fn init(
        layer_sizes: &[usize],
        output: OutputActivation,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(Error::Config(format!(
                "an MLP needs input, hidden and output sizes; got {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!(
                "layer sizes must be positive; got {layer_sizes:?}"
            )));
        }
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            output,
        })
    }

    /// Builds parameters from explicit arrays, validating every shape.
    pub fn from_parts(
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        output: OutputActivation,
    ) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::Config(
                "an MLP needs at least one hidden layer".to_string(),
            ));
        }
        if biases.len() != weights.len() {
            return Err(Error::shape("bias layer count", weights.len(), biases.len()));
        }
        let mut sizes = vec![weights[0].cols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.cols() != sizes[l] {
                return Err(Error::shape(format!("layer {l} input"), sizes[l], w.cols()));
            }
            if b.len() != w.rows() {
                return Err(Error::shape(format!("layer {l} bias"), w.rows(), b.len()));
            }
            sizes.push(w.rows());
        }
        let params = Self {
            layer_sizes: sizes,
            weights,
            biases,
            output,
        };
        params.validate()?;
        Ok(params)
    }

    /// Checks internal consistency; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        let n = self.layer_sizes.len();
        if n < 3 || self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Corrupt(format!(
                "bad layer sizes {:?}",
                self.layer_sizes
            )));
        }
        if self.weights.len() != n - 1 || self.biases.len() != n - 1 {
            return Err(Error::Corrupt("layer count mismatch".into()));
        }
        for l in 0..n - 1 {
            let w = &self.weights[l];
            if w.rows() != self.layer_sizes[l + 1]
                || w.cols() != self.layer_sizes[l]
                || w.data().len() != w.rows() * w.cols()
                || self.biases[l].len() != self.layer_sizes[l + 1]
            {
                return Err(Error::Corrupt(format!("layer {l} has inconsistent shape")));
            }
            if !w.is_finite() || self.biases[l].iter().any(|v| !v.is_finite()) {
                return Err(Error::Corrupt(format!("layer {l} holds non-finite values")));
            }
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.data().len() + b.len())
            .sum()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape("MLP input columns", self.input_dim(), x.cols()));
        }
        Ok(())
    }

    fn layer(&self, l: usize, input: &Matrix) -> Result<Matrix> {
        let mut z = input.matmul_nt(&self.weights[l])?;
        z.add_row_vector(&self.biases[l]);
        Ok(z)
    }

    fn activate(&self, l: usize, z: &mut Matrix) {
        if l + 1 < self.weights.len() {
            z.map_inplace(|v| v.max(0.0));
        } else if self.output == OutputActivation::Sigmoid {
            z.map_inplace(sigmoid);
        }
    }

    /// Forward pass without recording a cache.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut a = self.layer(0, x)?;
        self.activate(0, &mut a);
        for l in 1..self.weights.len() {
            let mut z = self.layer(l, &a)?;
            self.activate(l, &mut z);
            a = z;
        }
        Ok(a)
    }

    /// Forward pass that records what [`MlpParams::backward`] needs.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(x)?;
        let depth = self.weights.len();
        let mut activations = Vec::with_capacity(depth + 1);
        let mut pre = Vec::with_capacity(depth);
        activations.push(x.clone());
        for l in 0..depth {
            let z = self.layer(l, &activations[l])?;
            let mut a = z.clone();
            self.activate(l, &mut a);
            pre.push(z);
            activations.push(a);
        }
        let cache = ForwardCache {
            layer_sizes: self.layer_sizes.clone(),
            activations,
            pre,
        };
        Ok((cache.output().clone(), cache))
    }

    /// Reverse pass. `grad_output` is the loss gradient with respect to the
    /// network output (after the output activation). Returns parameter
    /// gradients and the gradient with respect to the input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &Matrix,
    ) -> Result<(MlpGrads, Matrix)> {
        let (grads, input_grad) = self.backward_impl(cache, grad_output, true)?;
        Ok((grads, input_grad.expect("requested input gradient")))
    }

    /// Reverse pass that skips the input gradient.
    pub fn backward_params(&self, cache: &ForwardCache, grad_output: &Matrix) -> Result<MlpGrads> {
        Ok(self.backward_impl(cache, grad_output, false)?.0)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        grad_output: &Matrix,
        want_input: bool,
    ) -> Result<(MlpGrads, Option<Matrix>)> {
        if cache.layer_sizes != self.layer_sizes {
            return Err(Error::shape(
                "forward cache depth/widths",
                self.layer_sizes.len(),
                cache.layer_sizes.len(),
            ));
        }
        let batch = cache.batch_size();
        if grad_output.rows() != batch || grad_output.cols() != self.output_dim() {
            return Err(Error::shape(
                "gradient of output",
                batch * self.output_dim(),
                grad_output.rows() * grad_output.cols(),
            ));
        }
        let depth = self.weights.len();
        let mut delta = grad_output.clone();
        if self.output == OutputActivation::Sigmoid {
            let out = cache.output();
            for (d, &s) in delta.data_mut().iter_mut().zip(out.data()) {
                *d *= s * (1.0 - s);
            }
        }
        let mut weights = vec![Matrix::zeros(0, 0); depth];
        let mut biases = vec![Vec::new(); depth];
        let mut input_grad = None;
        for l in (0..depth).rev() {
            weights[l] = delta.matmul_tn(&cache.activations[l])?;
            biases[l] = delta.sum_rows();
            if l == 0 && !want_input {
                break;
            }
            let mut upstream = delta.matmul(&self.weights[l])?;
            if l == 0 {
                input_grad = Some(upstream);
                break;
            }
            // ReLU derivative, with the subgradient at 0 taken as 0.
            for (g, &z) in upstream.data_mut().iter_mut().zip(cache.pre[l - 1].data()) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
            delta = upstream;
        }
        Ok((MlpGrads { weights, biases }, input_grad))
    }

    /// Applies `f(param, aux)` to every scalar parameter paired with the
    /// matching entry of `aux`.
    pub fn zip_apply(&mut self, aux: &MlpGrads, mut f: impl FnMut(&mut f64, f64)) {
        for (w, g) in self.weights.iter_mut().zip(&aux.weights) {
            for (p, &v) in w.data_mut().iter_mut().zip(g.data()) {
                f(p, v);
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&aux.biases) {
            for (p, &v) in b.iter_mut().zip(g) {
                f(p, v);
            }
        }
    }

    /// Mutable access to parameter `index` in the flat order used by
    /// [`MlpGrads::values`].
    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let nw = w.data().len();
            if index < nw {
                return Some(&mut w.data_mut()[index]);
            }
            index -= nw;
            if index < b.len() {
                return Some(&mut b[index]);
            }
            index -= b.len();
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> RngStream {
        RngStream::new(7, 0)
    }

    #[test]
    fn init_shapes() {
        let p = MlpParams::init(&[2, 4, 1], OutputActivation::Identity, &mut rng()).unwrap();
        assert_eq!((p.weights()[0].rows(), p.weights()[0].cols()), (4, 2));
        assert_eq!((p.weights()[1].rows(), p.weights()[1].cols()), (1, 4));
        assert_eq!(p.biases()[0].len(), 4);
        assert_eq!(p.biases()[1].len(), 1);
        assert!(p.biases().iter().flatten().all(|&b| b == 0.0));
        let bound = (6.0f64 / 2.0).sqrt();
        assert!(p.weights()[0].data().iter().all(|w| w.abs() < bound));
    }

    #[test]
    fn init_is_deterministic() {
        let a = MlpParams::init(&[3, 8, 8, 2], OutputActivation::Sigmoid, &mut rng()).unwrap();
        let b = MlpParams::init(&[3, 8, 8, 2], OutputActivation::Sigmoid, &mut rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(matches!(
            MlpParams::init(&[3], OutputActivation::Identity, &mut rng()),
            Err(Error::Config(_))
        ));
        assert!(MlpParams::init(&[3, 4], OutputActivation::Identity, &mut rng()).is_err());
        assert!(MlpParams::init(&[3, 0, 1], OutputActivation::Identity, &mut rng()).is_err());
    }

    #[test]
    fn zero_params_give_zero_output() {
        let mut p = MlpParams::init(&[3, 5, 2], OutputActivation::Identity, &mut rng()).unwrap();
        for w in p.weights_mut() {
            w.map_inplace(|_| 0.0);
        }
        let x = Matrix::filled(4, 3, 1.5);
        let (out, _) = p.forward(&x).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_clips_negative_preactivation() {
        let w = vec![
            Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
        ];
        let p = MlpParams::from_parts(w, vec![vec![0.0], vec![0.0]], OutputActivation::Identity)
            .unwrap();
        let x = Matrix::from_vec(1, 1, vec![-3.0]).unwrap();
        let (out, cache) = p.forward(&x).unwrap();
        assert_eq!(out.get(0, 0), 0.0);
        // Dead unit: nothing flows back to the first layer or the input.
        let (g, gin) = p.backward(&cache, &Matrix::filled(1, 1, 1.0)).unwrap();
        assert_eq!(g.weights[0].get(0, 0), 0.0);
        assert_eq!(gin.get(0, 0), 0.0);
    }

    #[test]
    fn output_shape_and_sigmoid_range() {
        let p = MlpParams::init(&[4, 16, 3], OutputActivation::Sigmoid, &mut rng()).unwrap();
        let data = (0..20).map(|i| (i as f64 - 10.0) * 3.0).collect();
        let x = Matrix::from_vec(5, 4, data).unwrap();
        let (out, _) = p.forward(&x).unwrap();
        assert_eq!((out.rows(), out.cols()), (5, 3));
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(p.forward(&Matrix::zeros(5, 3)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = MlpParams::init(&[3, 6, 6, 2], OutputActivation::Sigmoid, &mut rng()).unwrap();
        let x = Matrix::filled(4, 3, 0.3);
        let (_, cache) = p.forward(&x).unwrap();
        let (g, gin) = p.backward(&cache, &Matrix::zeros(4, 2)).unwrap();
        assert!(g.values().all(|v| v == 0.0));
        assert!(gin.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let p = MlpParams::init(&[3, 6, 2], OutputActivation::Identity, &mut rng()).unwrap();
        let q = MlpParams::init(&[3, 5, 2], OutputActivation::Identity, &mut rng()).unwrap();
        let (_, cache) = q.forward(&Matrix::zeros(2, 3)).unwrap();
        assert!(matches!(
            p.backward(&cache, &Matrix::zeros(2, 2)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) > 0.0 && sigmoid(800.0) < 1.0);
        assert!(sigmoid(-800.0).is_finite());
    }
}
