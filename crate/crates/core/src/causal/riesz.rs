//! Riesz representer of the price-change moment, learned by minimizing
//! `mean[α(z)² − 2(α(z with shifted own price) − α(z))]`.

use serde::{Deserialize, Serialize};

use crate::deepset::{SetAdam, SetArch, SetNetwork};
use crate::elastic::PriceShift;
use crate::error::{Error, Result};
use crate::market::{Market, PRICE_COL};
use crate::nn::{Matrix, OutputActivation, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RieszConfig {
    pub arch: SetArch,
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for RieszConfig {
    fn default() -> Self {
        Self {
            arch: SetArch {
                phi_hidden: vec![32, 32],
                embed_dim: 16,
                rho_hidden: vec![32, 32],
            },
            lr: 1e-3,
            epochs: 200,
            weight_decay: 1e-2,
            seed: 0,
        }
    }
}

/// `α(z)` on the demand model's featurization: own row through φ₁ plus
/// the pooled competitor rows through φ₂, with a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RieszModel {
    net: SetNetwork,
    pub shift: PriceShift,
    /// Training loss per epoch.
    pub history: Vec<f64>,
}

impl RieszModel {
    pub fn alpha(&self, market: &Market) -> Result<Vec<f64>> {
        self.net.predict_market(&market.features)
    }

    pub fn network(&self) -> &SetNetwork {
        &self.net
    }
}

/// `mean[α(z)² − 2(α(z_shift) − α(z))]` for any `α`, where `z_shift` moves
/// only the own price of the evaluated row.
pub fn riesz_loss(
    alpha: &dyn Fn(&Market) -> Result<Vec<f64>>,
    markets: &[Market],
    shift: PriceShift,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for m in markets {
        let a = alpha(m)?;
        for j in 0..m.num_products() {
            let moved = alpha(&m.with_price(j, shift.apply(m.price(j))))?;
            sum += a[j] * a[j] - 2.0 * (moved[j] - a[j]);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Config("Riesz loss needs product rows".into()));
    }
    Ok(sum / n as f64)
}

/// Own-row inputs with every price shifted, standardized like `packed`.
fn shifted_own(net: &SetNetwork, markets: &[Market], shift: PriceShift) -> Result<Matrix> {
    let parts: Vec<&Matrix> = markets.iter().map(|m| &m.features).collect();
    let mut raw = Matrix::vstack(&parts)?;
    for r in 0..raw.rows() {
        let p = raw.get(r, PRICE_COL);
        raw.set(r, PRICE_COL, shift.apply(p));
    }
    net.standardize(&raw)
}

pub fn fit_riesz(train: &[Market], shift: PriceShift, cfg: &RieszConfig) -> Result<RieszModel> {
    shift.validate()?;
    if cfg.epochs == 0 || !(cfg.lr > 0.0) || cfg.weight_decay < 0.0 {
        return Err(Error::Config("Riesz epochs and lr must be positive".into()));
    }
    let first = train
        .first()
        .ok_or_else(|| Error::Config("Riesz fit needs at least one market".into()))?;
    let mut rng = RngStream::new(cfg.seed, 0x7272);
    let mut net = SetNetwork::new(first.num_features(), cfg.arch.clone(), OutputActivation::Identity, &mut rng)?;
    // Start from α ≡ 0, the loss's natural reference point.
    let rho = net.rho_mut();
    if let Some(w) = rho.weights_mut().last_mut() {
        w.map_inplace(|_| 0.0);
    }
    if let Some(b) = rho.biases_mut().last_mut() {
        b.iter_mut().for_each(|v| *v = 0.0);
    }
    let parts: Vec<&Matrix> = train.iter().map(|m| &m.features).collect();
    net.fit_standardization(&Matrix::vstack(&parts)?);
    let packed = net.pack(train.iter().map(|m| &m.features))?;
    let own_shift = shifted_own(&net, train, shift)?;
    let n = packed.x.rows() as f64;
    let mut opt = SetAdam::new(&net);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let base = net.forward_train(&packed.x, &packed)?;
        let moved = net.forward_train(&own_shift, &packed)?;
        let mut loss = 0.0;
        let mut g_base = Vec::with_capacity(base.out.len());
        for (a, b) in base.out.iter().zip(&moved.out) {
            loss += a * a - 2.0 * (b - a);
            g_base.push((2.0 * a + 2.0) / n);
        }
        loss /= n;
        if !loss.is_finite() {
            log::error!("Riesz loss trace before divergence: {:?}", history);
            return Err(Error::Diverged { epoch, loss });
        }
        history.push(loss);
        let g_moved = vec![-2.0 / n; moved.out.len()];
        let mut grads = net.backward_train(&base, &g_base)?;
        grads.add_assign(&net.backward_train(&moved, &g_moved)?);
        opt.step(&mut net, grads, cfg.lr, cfg.weight_decay)?;
    }
    Ok(RieszModel { net, shift, history })
}
