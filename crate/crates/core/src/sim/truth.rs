//! Generative truth: frozen coefficient draws that produce the observed
//! shares and serve as the oracle for counterfactual shares and elasticities.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{apply_nonlinear, CoefPreset, Dgp, Transform};
use crate::error::{Error, Result};
use crate::market::{Market, PRICE_COL};
use crate::nn::Matrix;
use crate::predictor::SharePredictor;

/// Independent normal distributions for the price coefficient and each
/// characteristic coefficient. Variances of zero give fixed coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefDist {
    pub alpha_mean: f64,
    pub alpha_var: f64,
    pub beta_mean: Vec<f64>,
    pub beta_var: f64,
}

impl CoefDist {
    pub fn fixed(alpha: f64, beta: Vec<f64>) -> Self {
        Self {
            alpha_mean: alpha,
            alpha_var: 0.0,
            beta_mean: beta,
            beta_var: 0.0,
        }
    }

    /// Distribution for a preset. The baseline RCL draws its mean
    /// characteristic coefficients from `N(0, 1/(2K))` using `rng`.
    pub fn for_preset(preset: CoefPreset, dgp: Dgp, k: usize, rng: &mut impl Rng) -> Self {
        if dgp.is_mnl() {
            return Self::fixed(-1.0, vec![1.0; k]);
        }
        match preset {
            CoefPreset::Baseline => {
                let sd = if k > 0 { (1.0 / (2.0 * k as f64)).sqrt() } else { 0.0 };
                let beta_mean = (0..k)
                    .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Self {
                    alpha_mean: -1.0,
                    alpha_var: 1.0,
                    beta_mean,
                    beta_var: 1.0,
                }
            }
            CoefPreset::Coverage => Self {
                alpha_mean: -1.0,
                alpha_var: 0.5,
                beta_mean: vec![1.0; k],
                beta_var: 0.5,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthModel {
    dgp: Dgp,
    transform: Transform,
    inattention: bool,
    /// `draws × (1+K)`; column 0 is the price coefficient.
    coefs: Matrix,
}

impl TruthModel {
    pub fn sample(dgp: Dgp, dist: &CoefDist, draws: usize, rng: &mut impl Rng) -> Result<Self> {
        if draws == 0 {
            return Err(Error::Config("truth model needs at least one draw".into()));
        }
        let k = dist.beta_mean.len();
        let (sa, sb) = (dist.alpha_var.sqrt(), dist.beta_var.sqrt());
        let mut coefs = Matrix::zeros(draws, 1 + k);
        for r in 0..draws {
            let row = coefs.row_mut(r);
            row[0] = dist.alpha_mean + sa * rng.sample::<f64, _>(StandardNormal);
            for (c, mean) in dist.beta_mean.iter().enumerate() {
                row[1 + c] = mean + sb * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Self::from_coefficients(dgp, coefs)
    }

    /// A truth model with explicit per-draw coefficient rows `(α, β₁..β_K)`.
    pub fn from_coefficients(dgp: Dgp, coefs: Matrix) -> Result<Self> {
        if coefs.rows() == 0 || coefs.cols() == 0 {
            return Err(Error::Config("coefficient matrix is empty".into()));
        }
        if !coefs.is_finite() {
            return Err(Error::NonFinite("truth coefficients".into()));
        }
        Ok(Self {
            dgp,
            transform: dgp.transform(),
            inattention: dgp == Dgp::Inattention,
            coefs,
        })
    }

    pub fn dgp(&self) -> Dgp {
        self.dgp
    }

    pub fn num_draws(&self) -> usize {
        self.coefs.rows()
    }

    pub fn num_characteristics(&self) -> usize {
        self.coefs.cols() - 1
    }

    pub fn coefficients(&self) -> &Matrix {
        &self.coefs
    }

    fn check(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.coefs.cols() {
            return Err(Error::shape("truth model features", self.coefs.cols(), features.cols()));
        }
        Ok(())
    }

    fn utilities(&self, features: &Matrix) -> Result<Matrix> {
        self.check(features)?;
        let mut t = features.clone();
        if self.transform != Transform::Identity {
            let tag = self.transform;
            t.map_inplace(|x| apply_nonlinear(tag, x));
        }
        t.matmul_nt(&self.coefs)
    }

    /// Utilities at the average coefficient vector (exact for fixed
    /// coefficients).
    pub fn mean_utilities(&self, features: &Matrix) -> Result<Vec<f64>> {
        self.check(features)?;
        let n = self.coefs.rows() as f64;
        let mean: Vec<f64> = (0..self.coefs.cols())
            .map(|c| self.coefs.column(c).iter().sum::<f64>() / n)
            .collect();
        Ok((0..features.rows())
            .map(|j| {
                features
                    .row(j)
                    .iter()
                    .zip(&mean)
                    .map(|(x, b)| apply_nonlinear(self.transform, *x) * b)
                    .sum()
            })
            .collect())
    }

    /// Expected shares for a `J × (1+K)` feature matrix (price first).
    pub fn shares(&self, features: &Matrix) -> Result<Vec<f64>> {
        let u = self.utilities(features)?;
        let j = features.rows();
        let all = mean_logit(&u, None);
        if !self.inattention || j == 0 {
            return Ok(all);
        }
        let prices = features.column(PRICE_COL);
        let star = highest_price(&prices);
        let w = inattentive_fraction(prices[star]);
        let rest = mean_logit(&u, Some(star));
        Ok(all
            .iter()
            .zip(&rest)
            .map(|(a, r)| (1.0 - w) * a + w * r)
            .collect())
    }
}

impl TruthModel {
    /// `s_j(p_j → new_prices[j]) − s_j(p)` for every product `j`, each with
    /// all other prices unchanged. One pass over the draws instead of one
    /// share evaluation per product.
    pub fn own_price_effects(&self, features: &Matrix, new_prices: &[f64]) -> Result<Vec<f64>> {
        let j = features.rows();
        if new_prices.len() != j {
            return Err(Error::shape("shifted prices", j, new_prices.len()));
        }
        if self.inattention {
            let base = self.shares(features)?;
            return (0..j)
                .map(|i| {
                    let mut f = features.clone();
                    f.set(i, PRICE_COL, new_prices[i]);
                    Ok(self.shares(&f)?[i] - base[i])
                })
                .collect();
        }
        let u = self.utilities(features)?;
        let dg: Vec<f64> = (0..j)
            .map(|i| {
                apply_nonlinear(self.transform, new_prices[i])
                    - apply_nonlinear(self.transform, features.get(i, PRICE_COL))
            })
            .collect();
        let r = u.cols();
        let mut acc = vec![0.0; j];
        let mut e = vec![0.0; j];
        for d in 0..r {
            let alpha = self.coefs.get(d, PRICE_COL);
            let mut top = 0.0f64;
            for i in 0..j {
                top = top.max(u.get(i, d));
            }
            let mut denom = (-top).exp();
            for i in 0..j {
                e[i] = (u.get(i, d) - top).exp();
                denom += e[i];
            }
            for i in 0..j {
                let moved = e[i] * (alpha * dg[i]).exp();
                acc[i] += moved / (denom - e[i] + moved) - e[i] / denom;
            }
        }
        Ok(acc.iter().map(|a| a / r as f64).collect())
    }
}

/// Fraction of consumers ignoring the top-priced product: `1 − 1/(1+p)`.
pub fn inattentive_fraction(price: f64) -> f64 {
    1.0 - 1.0 / (1.0 + price)
}

/// Index of the highest price, lowest index on ties.
pub fn highest_price(prices: &[f64]) -> usize {
    let mut best = 0;
    for (j, &p) in prices.iter().enumerate() {
        if p > prices[best] {
            best = j;
        }
    }
    best
}

/// Mean over draws (columns of `u`) of logit probabilities with an outside
/// option of utility 0; `skip` removes one product from the choice set.
fn mean_logit(u: &Matrix, skip: Option<usize>) -> Vec<f64> {
    let (j, r) = (u.rows(), u.cols());
    let mut acc = vec![0.0; j];
    let mut e = vec![0.0; j];
    for d in 0..r {
        let mut top = 0.0f64;
        for i in 0..j {
            if Some(i) != skip {
                top = top.max(u.get(i, d));
            }
        }
        let mut denom = (-top).exp();
        for i in 0..j {
            e[i] = if Some(i) == skip { 0.0 } else { (u.get(i, d) - top).exp() };
            denom += e[i];
        }
        for i in 0..j {
            acc[i] += e[i] / denom;
        }
    }
    acc.iter().map(|a| a / r as f64).collect()
}

impl SharePredictor for TruthModel {
    fn label(&self) -> String {
        "truth".into()
    }

    fn predict_market(&self, market: &Market) -> Result<Vec<f64>> {
        match market.mu_col {
            None => self.shares(&market.features),
            Some(mu) => {
                let keep: Vec<usize> = (0..market.num_features()).filter(|&c| c != mu).collect();
                let mut f = Matrix::zeros(market.num_products(), keep.len());
                for r in 0..f.rows() {
                    for (i, &c) in keep.iter().enumerate() {
                        f.set(r, i, market.features.get(r, c));
                    }
                }
                self.shares(&f)
            }
        }
    }
}

/// Arc elasticity of product `j`'s true share with respect to product `k`'s
/// price after a relative price increase of `pct`.
pub fn true_elasticity(truth: &TruthModel, market: &Market, j: usize, k: usize, pct: f64) -> Result<f64> {
    if !(pct > 0.0 && pct.is_finite()) {
        return Err(Error::Config(format!("price change {pct} must be positive")));
    }
    let n = market.num_products();
    if j >= n || k >= n {
        return Err(Error::shape("elasticity product index", n, j.max(k)));
    }
    let base = truth.predict_market(market)?;
    if base[j] <= 0.0 {
        return Err(Error::UndefinedElasticity {
            j,
            k,
            reason: "base share is zero".into(),
        });
    }
    let p = market.price(k);
    if p == 0.0 {
        return Err(Error::UndefinedElasticity {
            j,
            k,
            reason: "price is zero".into(),
        });
    }
    let moved = truth.predict_market(&market.with_price(k, p * (1.0 + pct)))?;
    Ok((moved[j] - base[j]) / base[j] / pct)
}
