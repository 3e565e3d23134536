//! Permutation-invariant demand estimator.
//!
//! A product's share is modelled as `ρ(φ₁(x_j) + Σ_{k≠j} φ₂(x_k))` where
//! `x` is a product's feature row (price, characteristics, and optionally a
//! first-stage residual). The parameter count depends only on the feature
//! width and the layer widths, so one model serves markets of any size.

mod network;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use network::{PackedRows, SetAdam, SetArch, SetGrads, SetNetwork};

use crate::error::{Error, Result};
use crate::market::Market;
use crate::nn::{Matrix, OutputActivation, RngStream};
use crate::predictor::SharePredictor;

pub const DEEPSET_FORMAT_VERSION: u32 = 1;
const DEEPSET_FORMAT: &str = "deepchoice-deepset";

/// The demand model: a [`SetNetwork`] with a sigmoid share output.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepSetModel {
    net: SetNetwork,
}

/// Optimizer settings for [`train`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Markets per minibatch; `None` trains full-batch.
    pub batch_markets: Option<usize>,
    /// Learning rate multiplier reached at the last epoch (geometric decay).
    pub lr_decay: f64,
    /// Epochs over which the learning rate ramps linearly up to `lr`.
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    /// Refit input standardization and the output bias on the training data
    /// before the first step.
    pub calibrate: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 500,
            batch_markets: None,
            lr_decay: 1.0,
            warmup_epochs: 0,
            weight_decay: 0.0,
            calibrate: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_markets == Some(0) {
            return Err(Error::Config("batch_markets must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay {} must be in (0, 1]", self.lr_decay)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    pub(crate) fn lr_at(&self, epoch: usize) -> f64 {
        let ramp = ((epoch + 1) as f64 / (self.warmup_epochs + 1) as f64).min(1.0);
        if self.epochs <= 1 {
            return ramp * self.lr;
        }
        ramp * self.lr * self.lr_decay.powf(epoch as f64 / (self.epochs - 1) as f64)
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Training MSE per epoch, measured during the epoch's updates.
    pub history: Vec<f64>,
    pub initial_mse: f64,
    pub final_mse: f64,
}

#[derive(Serialize, Deserialize)]
struct DeepSetFile {
    format: String,
    version: u32,
    k_in: usize,
    embed_dim: usize,
    output_activation: OutputActivation,
    network: SetNetwork,
}

impl DeepSetModel {
    pub fn new(k_in: usize, arch: SetArch, rng: &mut RngStream) -> Result<Self> {
        Ok(Self {
            net: SetNetwork::new(k_in, arch, OutputActivation::Sigmoid, rng)?,
        })
    }

    pub fn k_in(&self) -> usize {
        self.net.k_in()
    }

    pub fn embed_dim(&self) -> usize {
        self.net.arch().embed_dim
    }

    pub fn network(&self) -> &SetNetwork {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut SetNetwork {
        &mut self.net
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    /// Fits input standardization to the training rows and points the output
    /// bias at the logit of the mean training share.
    pub fn calibrate(&mut self, markets: &[Market]) -> Result<()> {
        let parts: Vec<&Matrix> = markets.iter().map(|m| &m.features).collect();
        let stacked = Matrix::vstack(&parts)?;
        self.net.check_features(&stacked)?;
        self.net.fit_standardization(&stacked);
        let n = stacked.rows().max(1) as f64;
        let mean = markets.iter().flat_map(|m| &m.shares).sum::<f64>() / n;
        let mean = mean.clamp(1e-6, 1.0 - 1e-6);
        let rho = self.net.rho_mut();
        let last = rho.biases().len() - 1;
        rho.biases_mut()[last][0] = (mean / (1.0 - mean)).ln();
        Ok(())
    }

    /// Share of product `j`, pooling competitors in canonical order.
    pub fn predict_share(&self, market: &Market, j: usize) -> Result<f64> {
        self.net.predict_one(&market.features, j)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = DeepSetFile {
            format: DEEPSET_FORMAT.into(),
            version: DEEPSET_FORMAT_VERSION,
            k_in: self.k_in(),
            embed_dim: self.embed_dim(),
            output_activation: OutputActivation::Sigmoid,
            network: self.net.clone(),
        };
        let bytes = serde_json::to_vec(&file).map_err(|e| Error::Corrupt(e.to_string()))?;
        crate::util::write_atomic(path.as_ref(), &bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_json(&bytes)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let raw: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| Error::Corrupt(e.to_string()))?;
        crate::nn::serialize_check_header(&raw, DEEPSET_FORMAT, DEEPSET_FORMAT_VERSION)?;
        let file: DeepSetFile =
            serde_json::from_value(raw).map_err(|e| Error::Corrupt(e.to_string()))?;
        if file.output_activation != OutputActivation::Sigmoid
            || file.network.rho().output_activation() != OutputActivation::Sigmoid
        {
            return Err(Error::Corrupt("demand model must have a sigmoid output".into()));
        }
        file.network.validate()?;
        if file.k_in != file.network.k_in() || file.embed_dim != file.network.arch().embed_dim {
            return Err(Error::Corrupt("architecture header disagrees with parameters".into()));
        }
        Ok(Self { net: file.network })
    }
}

impl SharePredictor for DeepSetModel {
    fn label(&self) -> String {
        "deepset".into()
    }

    fn predict_market(&self, market: &Market) -> Result<Vec<f64>> {
        self.net.predict_market(&market.features)
    }
}

/// Minimizes the mean squared share error over every (product, market) pair.
pub fn train(model: &mut DeepSetModel, markets: &[Market], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if markets.is_empty() {
        return Err(Error::Config("training needs at least one market".into()));
    }
    for m in markets {
        model.net.check_features(&m.features)?;
        m.validate_shares()?;
    }
    if cfg.calibrate {
        model.calibrate(markets)?;
    }
    let net = &mut model.net;
    let packed: Vec<PackedRows> = markets
        .iter()
        .map(|m| net.pack(std::iter::once(&m.features)))
        .collect::<Result<_>>()?;
    let targets: Vec<&[f64]> = markets.iter().map(|m| m.shares.as_slice()).collect();
    let all: Vec<usize> = (0..markets.len()).collect();
    let full = concat(&packed, &targets, &all)?;

    let initial_mse = mse_of(net, &full.0, &full.1)?;
    let mut opt = SetAdam::new(net);
    let mut rng = RngStream::new(cfg.seed, 0x7472_6169_6e);
    let mut order = all.clone();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let loss = match cfg.batch_markets {
            None => demand_step(net, &mut opt, &full.0, &full.1, lr, cfg.weight_decay)?,
            Some(b) => {
                order.shuffle(&mut rng);
                let mut sum = 0.0;
                let mut rows = 0usize;
                for chunk in order.chunks(b) {
                    let (batch, y) = concat(&packed, &targets, chunk)?;
                    let l = demand_step(net, &mut opt, &batch, &y, lr, cfg.weight_decay)?;
                    sum += l * y.len() as f64;
                    rows += y.len();
                }
                sum / rows as f64
            }
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        history.push(loss);
    }

    warn_if_not_decreasing(&history, 50);
    let final_mse = mse_of(net, &full.0, &full.1)?;
    if !final_mse.is_finite() {
        return Err(Error::Diverged {
            epoch: cfg.epochs,
            loss: final_mse,
        });
    }
    Ok(TrainReport {
        history,
        initial_mse,
        final_mse,
    })
}

fn concat(packed: &[PackedRows], targets: &[&[f64]], idx: &[usize]) -> Result<(PackedRows, Vec<f64>)> {
    let parts: Vec<&Matrix> = idx.iter().map(|&i| &packed[i].x).collect();
    let x = Matrix::vstack(&parts)?;
    let mut offsets = vec![0];
    let mut y = Vec::with_capacity(x.rows());
    for &i in idx {
        offsets.push(offsets.last().unwrap() + packed[i].x.rows());
        y.extend_from_slice(targets[i]);
    }
    Ok((PackedRows { x, offsets }, y))
}

fn mse_of(net: &SetNetwork, batch: &PackedRows, y: &[f64]) -> Result<f64> {
    let fwd = net.forward_train(&batch.x, batch)?;
    Ok(fwd
        .out
        .iter()
        .zip(y)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / y.len() as f64)
}

fn demand_step(
    net: &mut SetNetwork,
    opt: &mut SetAdam,
    batch: &PackedRows,
    y: &[f64],
    lr: f64,
    weight_decay: f64,
) -> Result<f64> {
    let fwd = net.forward_train(&batch.x, batch)?;
    let n = y.len() as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = fwd
        .out
        .iter()
        .zip(y)
        .map(|(p, t)| {
            let e = p - t;
            loss += e * e;
            2.0 * e / n
        })
        .collect();
    loss /= n;
    if !loss.is_finite() {
        return Ok(loss);
    }
    let grads = net.backward_train(&fwd, &grad)?;
    opt.step(net, grads, lr, weight_decay)?;
    Ok(loss)
}

fn warn_if_not_decreasing(history: &[f64], window: usize) {
    for (t, w) in history.windows(window + 1).enumerate() {
        if w[window] > w[0] {
            log::warn!(
                "training loss rose over epochs {t}..{}: {:.3e} -> {:.3e}",
                t + window,
                w[0],
                w[window]
            );
            return;
        }
    }
}

#[cfg(test)]
mod tests;
