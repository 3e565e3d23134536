//! Price regression on characteristics and instruments. Its residual is
//! the control variable appended to the demand model's inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::least_squares;
use crate::error::{Error, Result};
use crate::market::{Market, PRICE_COL};
use crate::nn::{adam_step, AdamState, Matrix, MlpParams, OutputActivation, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FirstStageSpec {
    /// Linear regression with an intercept.
    Ols,
    /// Small ReLU network with a linear output, trained full-batch.
    Mlp {
        hidden: Vec<usize>,
        epochs: usize,
        lr: f64,
        seed: u64,
    },
}

impl Default for FirstStageSpec {
    fn default() -> Self {
        FirstStageSpec::Ols
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstStageFit {
    pub spec: FirstStageSpec,
    /// OLS coefficients in the order of [`FirstStageFit::regressor_names`].
    pub coefficients: Option<Vec<f64>>,
    pub regressor_names: Vec<String>,
    /// Residuals per market, aligned with each market's rows.
    pub residuals: Vec<Vec<f64>>,
    pub market_ids: Vec<u64>,
    pub r_squared: f64,
}

impl FirstStageFit {
    pub fn all_residuals(&self) -> Vec<f64> {
        self.residuals.iter().flatten().copied().collect()
    }
}

/// Regressor rows `(1, x_1..x_K, z_1..z_L)` for every product row, with
/// their column names.
pub fn first_stage_design(markets: &[Market]) -> Result<(Matrix, Vec<String>)> {
    let first = markets
        .first()
        .ok_or_else(|| Error::Config("first stage needs at least one market".into()))?;
    let k = first.num_characteristics();
    let z_cols = match &first.instruments {
        Some(z) => z.cols(),
        None => {
            return Err(Error::Config(format!(
                "market {} has no instrument columns; the first stage needs instruments",
                first.id
            )))
        }
    };
    if first.mu_col.is_some() {
        return Err(Error::Config("first stage expects data without a residual column".into()));
    }
    let mut names = vec!["intercept".to_string()];
    names.extend((1..=k).map(|i| format!("x{i}")));
    names.extend((1..=z_cols).map(|i| format!("z{i}")));
    let mut rows = Vec::new();
    for m in markets {
        let z = m.instruments.as_ref().ok_or_else(|| {
            Error::Config(format!("market {} has no instrument columns", m.id))
        })?;
        if z.cols() != z_cols || m.num_characteristics() != k || z.rows() != m.num_products() {
            return Err(Error::shape(
                format!("market {} regressors", m.id),
                1 + k + z_cols,
                1 + m.num_characteristics() + z.cols(),
            ));
        }
        for j in 0..m.num_products() {
            let mut r = Vec::with_capacity(names.len());
            r.push(1.0);
            r.extend_from_slice(m.characteristics(j));
            r.extend_from_slice(z.row(j));
            rows.push(r);
        }
    }
    Ok((Matrix::from_rows(&rows)?, names))
}

/// Regresses price on characteristics and instruments and stores the
/// per-row residuals `μ̂ = p − γ̂(X, Z)`.
pub fn fit_first_stage(markets: &[Market], spec: &FirstStageSpec) -> Result<FirstStageFit> {
    let (x, names) = first_stage_design(markets)?;
    let prices: Vec<f64> = markets.iter().flat_map(|m| m.prices()).collect();
    let n = prices.len();
    let (fitted, coefficients) = match spec {
        FirstStageSpec::Ols => {
            if n < x.cols() {
                return Err(Error::RankDeficient {
                    column: n,
                    name: names[n].clone(),
                });
            }
            let coef = least_squares(
                DMatrix::from_row_slice(n, x.cols(), x.data()),
                DVector::from_column_slice(&prices),
                |c| names[c].clone(),
            )?;
            let fitted: Vec<f64> = (0..n)
                .map(|r| x.row(r).iter().zip(&coef).map(|(a, b)| a * b).sum())
                .collect();
            (fitted, Some(coef))
        }
        FirstStageSpec::Mlp {
            hidden,
            epochs,
            lr,
            seed,
        } => (fit_mlp(&x, &prices, hidden, *epochs, *lr, *seed)?, None),
    };
    let mean = prices.iter().sum::<f64>() / n as f64;
    let tss: f64 = prices.iter().map(|p| (p - mean).powi(2)).sum();
    let mut residuals = Vec::with_capacity(markets.len());
    let mut rss = 0.0;
    let mut at = 0;
    for m in markets {
        let r: Vec<f64> = (0..m.num_products())
            .map(|j| m.features.get(j, PRICE_COL) - fitted[at + j])
            .collect();
        rss += r.iter().map(|v| v * v).sum::<f64>();
        at += m.num_products();
        residuals.push(r);
    }
    Ok(FirstStageFit {
        spec: spec.clone(),
        coefficients,
        regressor_names: names,
        residuals,
        market_ids: markets.iter().map(|m| m.id).collect(),
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 1.0 },
    })
}

fn fit_mlp(x: &Matrix, y: &[f64], hidden: &[usize], epochs: usize, lr: f64, seed: u64) -> Result<Vec<f64>> {
    if hidden.is_empty() || epochs == 0 || !(lr > 0.0) {
        return Err(Error::Config("MLP first stage needs hidden layers, epochs and a positive lr".into()));
    }
    // Standardize every column except the intercept.
    let mut xs = x.clone();
    for c in 1..x.cols() {
        let col = x.column(c);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        let sd = if sd > 1e-12 { sd } else { 1.0 };
        for r in 0..xs.rows() {
            xs.set(r, c, (x.get(r, c) - mean) / sd);
        }
    }
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let yc = Matrix::from_vec(y.len(), 1, y.iter().map(|v| v - y_mean).collect())?;
    let mut sizes = vec![x.cols()];
    sizes.extend(hidden);
    sizes.push(1);
    let mut net = MlpParams::init(&sizes, OutputActivation::Identity, &mut RngStream::new(seed, 0x6673))?;
    let mut opt = AdamState::new(&net);
    let n = y.len() as f64;
    for epoch in 0..epochs {
        let (out, cache) = net.forward(&xs)?;
        let mut g = out;
        let mut loss = 0.0;
        for (gv, t) in g.data_mut().iter_mut().zip(yc.data()) {
            let e = *gv - t;
            loss += e * e;
            *gv = 2.0 * e / n;
        }
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        let grads = net.backward_params(&cache, &g)?;
        adam_step(&mut net, &grads, &mut opt, lr)?;
    }
    Ok(net.predict(&xs)?.data().iter().map(|v| v + y_mean).collect())
}

/// Appends the first-stage residual as the last feature column. The fit
/// must come from exactly these markets, in this order.
pub fn augment_with_residuals(markets: &[Market], fit: &FirstStageFit) -> Result<Vec<Market>> {
    if markets.len() != fit.residuals.len() {
        return Err(Error::shape("first-stage markets", fit.residuals.len(), markets.len()));
    }
    markets
        .iter()
        .zip(fit.residuals.iter().zip(&fit.market_ids))
        .map(|(m, (r, &id))| {
            if m.id != id {
                return Err(Error::Validation(format!(
                    "first-stage residuals belong to market {id}, not market {}",
                    m.id
                )));
            }
            if m.mu_col.is_some() {
                return Err(Error::Config(format!("market {} already has a residual column", m.id)));
            }
            if r.len() != m.num_products() {
                return Err(Error::shape(format!("market {} residuals", m.id), m.num_products(), r.len()));
            }
            let mut out = m.clone();
            out.features = m.features.append_column(r)?;
            out.mu_col = Some(out.features.cols() - 1);
            Ok(out)
        })
        .collect()
}
