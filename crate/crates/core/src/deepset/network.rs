//! The sum-pooled set network `ρ(φ₁(own) + Σ_{k≠j} φ₂(competitor k))`.
//!
//! [`SetNetwork`] carries the three perceptrons plus a per-column input
//! standardization. It is shared by the demand estimator (sigmoid output)
//! and the Riesz-representer model (identity output).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, ForwardCache, Matrix, MlpGrads, MlpParams, OutputActivation, RngStream};

/// Hidden widths of φ₁/φ₂ and ρ, and the pooled embedding size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetArch {
    pub phi_hidden: Vec<usize>,
    pub embed_dim: usize,
    pub rho_hidden: Vec<usize>,
}

impl Default for SetArch {
    fn default() -> Self {
        Self {
            phi_hidden: vec![64, 64],
            embed_dim: 32,
            rho_hidden: vec![64, 64],
        }
    }
}

impl SetArch {
    pub fn validate(&self) -> Result<()> {
        if self.phi_hidden.is_empty() || self.rho_hidden.is_empty() {
            return Err(Error::Config(
                "phi and rho each need at least one hidden layer".into(),
            ));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        Ok(())
    }
}

const RHO_OUTPUT_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetNetwork {
    pub(crate) k_in: usize,
    pub(crate) arch: SetArch,
    pub(crate) phi1: MlpParams,
    pub(crate) phi2: MlpParams,
    pub(crate) rho: MlpParams,
    pub(crate) input_shift: Vec<f64>,
    pub(crate) input_scale: Vec<f64>,
}

/// Row-stacked markets ready for batched passes. Rows of market `m` occupy
/// `offsets[m]..offsets[m + 1]`.
#[derive(Clone, Debug)]
pub struct PackedRows {
    pub x: Matrix,
    pub offsets: Vec<usize>,
}

impl PackedRows {
    pub fn num_markets(&self) -> usize {
        self.offsets.len() - 1
    }
}

pub(crate) struct SetForward {
    c1: ForwardCache,
    c2: ForwardCache,
    cr: ForwardCache,
    offsets: Vec<usize>,
    pub(crate) out: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SetGrads {
    pub phi1: MlpGrads,
    pub phi2: MlpGrads,
    pub rho: MlpGrads,
}

impl SetGrads {
    pub fn add_assign(&mut self, other: &SetGrads) {
        self.phi1.add_assign(&other.phi1);
        self.phi2.add_assign(&other.phi2);
        self.rho.add_assign(&other.rho);
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Row indices sorted by the rows' feature values, so that any reordering of
/// the same multiset of rows yields the same sequence of row contents.
pub(crate) fn canonical_order(features: &Matrix, rows: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = rows.collect();
    idx.sort_by(|&a, &b| lex_cmp(features.row(a), features.row(b)));
    idx
}

impl SetNetwork {
    pub fn new(
        k_in: usize,
        arch: SetArch,
        output: OutputActivation,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if k_in == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        arch.validate()?;
        let phi_sizes = |rng: &mut RngStream| {
            let mut sizes = vec![k_in];
            sizes.extend(&arch.phi_hidden);
            sizes.push(arch.embed_dim);
            MlpParams::init(&sizes, OutputActivation::Identity, rng)
        };
        let phi1 = phi_sizes(rng)?;
        let phi2 = phi_sizes(rng)?;
        let mut rho_sizes = vec![arch.embed_dim];
        rho_sizes.extend(&arch.rho_hidden);
        rho_sizes.push(1);
        let mut rho = MlpParams::init(&rho_sizes, output, rng)?;
        // Start near the output bias; pooled embeddings grow with market size.
        if let Some(last) = rho.weights_mut().last_mut() {
            last.map_inplace(|w| w * RHO_OUTPUT_INIT_SCALE);
        }
        Ok(Self {
            k_in,
            arch,
            phi1,
            phi2,
            rho,
            input_shift: vec![0.0; k_in],
            input_scale: vec![1.0; k_in],
        })
    }

    pub fn k_in(&self) -> usize {
        self.k_in
    }

    pub fn arch(&self) -> &SetArch {
        &self.arch
    }

    pub fn phi1(&self) -> &MlpParams {
        &self.phi1
    }

    pub fn phi2(&self) -> &MlpParams {
        &self.phi2
    }

    pub fn rho(&self) -> &MlpParams {
        &self.rho
    }

    pub fn rho_mut(&mut self) -> &mut MlpParams {
        &mut self.rho
    }

    pub fn num_params(&self) -> usize {
        self.phi1.num_params() + self.phi2.num_params() + self.rho.num_params()
    }

    pub fn validate(&self) -> Result<()> {
        self.phi1.validate()?;
        self.phi2.validate()?;
        self.rho.validate()?;
        let e = self.arch.embed_dim;
        if self.phi1.input_dim() != self.k_in
            || self.phi2.input_dim() != self.k_in
            || self.phi1.output_dim() != e
            || self.phi2.output_dim() != e
            || self.rho.input_dim() != e
            || self.rho.output_dim() != 1
            || self.input_shift.len() != self.k_in
            || self.input_scale.len() != self.k_in
        {
            return Err(Error::Corrupt("set network dimensions disagree".into()));
        }
        if self.input_scale.iter().any(|&s| !(s.is_finite() && s > 0.0))
            || self.input_shift.iter().any(|s| !s.is_finite())
        {
            return Err(Error::Corrupt("invalid input standardization".into()));
        }
        Ok(())
    }

    /// Sets the per-column standardization from the rows of `x`.
    pub fn fit_standardization(&mut self, x: &Matrix) {
        let n = x.rows().max(1) as f64;
        for c in 0..self.k_in {
            let mean = (0..x.rows()).map(|r| x.get(r, c)).sum::<f64>() / n;
            let var = (0..x.rows()).map(|r| (x.get(r, c) - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            self.input_shift[c] = mean;
            self.input_scale[c] = if sd > 1e-12 { sd } else { 1.0 };
        }
    }

    pub fn check_features(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.k_in {
            return Err(Error::shape("market feature columns", self.k_in, features.cols()));
        }
        Ok(())
    }

    /// Applies the stored standardization.
    pub fn standardize(&self, features: &Matrix) -> Result<Matrix> {
        self.check_features(features)?;
        let mut x = features.clone();
        for r in 0..x.rows() {
            for (c, v) in x.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.input_shift[c]) / self.input_scale[c];
            }
        }
        Ok(x)
    }

    /// Stacks and standardizes the feature matrices of several markets.
    pub fn pack<'a>(&self, features: impl IntoIterator<Item = &'a Matrix>) -> Result<PackedRows> {
        let mut parts = Vec::new();
        let mut offsets = vec![0];
        for f in features {
            self.check_features(f)?;
            offsets.push(offsets.last().unwrap() + f.rows());
            parts.push(f);
        }
        let stacked = Matrix::vstack(&parts)?;
        Ok(PackedRows {
            x: self.standardize(&stacked)?,
            offsets,
        })
    }

    /// One product's output with the competitor sum taken directly over the
    /// other rows in canonical order. Bit-identical under any permutation
    /// of the competitor rows.
    pub fn predict_one(&self, features: &Matrix, j: usize) -> Result<f64> {
        self.check_features(features)?;
        let n = features.rows();
        if j >= n {
            return Err(Error::shape("product index bound", n, j));
        }
        let x = self.standardize(features)?;
        let own = self.phi1.predict(&x.select_rows(&[j]))?;
        let mut pooled = vec![0.0; self.arch.embed_dim];
        for k in canonical_order(features, (0..n).filter(|&k| k != j)) {
            let h = self.phi2.predict(&x.select_rows(&[k]))?;
            for (p, v) in pooled.iter_mut().zip(h.data()) {
                *p += v;
            }
        }
        let mut z = own;
        for (v, p) in z.data_mut().iter_mut().zip(&pooled) {
            *v += p;
        }
        Ok(self.rho.predict(&z)?.get(0, 0))
    }

    /// All products of one market, using `Σ_{k≠j} φ₂ = Σ_k φ₂ − φ₂(j)` with
    /// the total accumulated in canonical row order.
    pub fn predict_market(&self, features: &Matrix) -> Result<Vec<f64>> {
        let x = self.standardize(features)?;
        let h1 = self.phi1.predict(&x)?;
        let h2 = self.phi2.predict(&x)?;
        let mut total = vec![0.0; self.arch.embed_dim];
        for k in canonical_order(features, 0..features.rows()) {
            for (t, v) in total.iter_mut().zip(h2.row(k)) {
                *t += v;
            }
        }
        let mut z = h1;
        for r in 0..z.rows() {
            let own2 = h2.row(r).to_vec();
            for ((v, t), o) in z.row_mut(r).iter_mut().zip(&total).zip(&own2) {
                *v += t - o;
            }
        }
        Ok(self.rho.predict(&z)?.into_vec())
    }

    /// Batched training forward pass. `own` feeds φ₁, `comp` feeds φ₂; both
    /// are standardized and share the same row layout.
    pub(crate) fn forward_train(&self, own: &Matrix, comp: &PackedRows) -> Result<SetForward> {
        let (h1, c1) = self.phi1.forward(own)?;
        let (h2, c2) = self.phi2.forward(&comp.x)?;
        let mut z = h1;
        let e = self.arch.embed_dim;
        for w in comp.offsets.windows(2) {
            let mut total = vec![0.0; e];
            for r in w[0]..w[1] {
                for (t, v) in total.iter_mut().zip(h2.row(r)) {
                    *t += v;
                }
            }
            for r in w[0]..w[1] {
                let own2 = h2.row(r);
                let zr = &mut z.data_mut()[r * e..(r + 1) * e];
                for ((v, t), o) in zr.iter_mut().zip(&total).zip(own2) {
                    *v += t - o;
                }
            }
        }
        let (out, cr) = self.rho.forward(&z)?;
        Ok(SetForward {
            c1,
            c2,
            cr,
            offsets: comp.offsets.clone(),
            out: out.into_vec(),
        })
    }

    /// Reverse pass for [`SetNetwork::forward_train`]; `grad_out[r]` is the
    /// loss gradient with respect to output row `r`.
    pub(crate) fn backward_train(&self, fwd: &SetForward, grad_out: &[f64]) -> Result<SetGrads> {
        let g = Matrix::from_vec(grad_out.len(), 1, grad_out.to_vec())?;
        let (rho, dz) = self.rho.backward(&fwd.cr, &g)?;
        let phi1 = self.phi1.backward_params(&fwd.c1, &dz)?;
        let e = self.arch.embed_dim;
        // d/dh2_k of Σ_j z_j where z_j pools every k ≠ j: (Σ_j dz_j) − dz_k.
        let mut dh2 = Matrix::zeros(dz.rows(), e);
        for w in fwd.offsets.windows(2) {
            let mut total = vec![0.0; e];
            for r in w[0]..w[1] {
                for (t, v) in total.iter_mut().zip(dz.row(r)) {
                    *t += v;
                }
            }
            for r in w[0]..w[1] {
                let dzr = dz.row(r).to_vec();
                for ((d, t), o) in dh2.row_mut(r).iter_mut().zip(&total).zip(&dzr) {
                    *d = t - o;
                }
            }
        }
        let phi2 = self.phi2.backward_params(&fwd.c2, &dh2)?;
        Ok(SetGrads { phi1, phi2, rho })
    }
}

/// Adam state for the three perceptrons of a [`SetNetwork`].
#[derive(Clone, Debug)]
pub struct SetAdam {
    phi1: AdamState,
    phi2: AdamState,
    rho: AdamState,
}

impl SetAdam {
    pub fn new(net: &SetNetwork) -> Self {
        Self {
            phi1: AdamState::new(&net.phi1),
            phi2: AdamState::new(&net.phi2),
            rho: AdamState::new(&net.rho),
        }
    }

    /// One Adam update. A positive `weight_decay` adds `λ·w` to every
    /// gradient before the update.
    pub fn step(
        &mut self,
        net: &mut SetNetwork,
        mut grads: SetGrads,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if weight_decay > 0.0 {
            add_decay(&mut grads.phi1, &net.phi1, weight_decay);
            add_decay(&mut grads.phi2, &net.phi2, weight_decay);
            add_decay(&mut grads.rho, &net.rho, weight_decay);
        }
        adam_step(&mut net.phi1, &grads.phi1, &mut self.phi1, lr)?;
        adam_step(&mut net.phi2, &grads.phi2, &mut self.phi2, lr)?;
        adam_step(&mut net.rho, &grads.rho, &mut self.rho, lr)
    }
}

fn add_decay(g: &mut MlpGrads, p: &MlpParams, lambda: f64) {
    for (gw, w) in g.weights.iter_mut().zip(p.weights()) {
        for (a, b) in gw.data_mut().iter_mut().zip(w.data()) {
            *a += lambda * b;
        }
    }
}
