//! Multinomial logit via the log-share inversion
//! `ln(s_j / s_0) = θ·x_j`, solved by least squares without an intercept.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Market;
use crate::predictor::SharePredictor;

/// Fraction of a column's norm below which its QR diagonal entry marks it as
/// collinear with the columns before it.
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MnlFit {
    /// Price coefficient.
    pub alpha: f64,
    /// Coefficients of the remaining feature columns, in column order.
    pub beta: Vec<f64>,
}

impl MnlFit {
    pub fn coefficients(&self) -> Vec<f64> {
        std::iter::once(self.alpha).chain(self.beta.iter().copied()).collect()
    }
}

/// Logit shares with an outside option of utility 0.
pub fn logit_shares(utilities: &[f64]) -> Vec<f64> {
    let top = utilities.iter().copied().fold(0.0f64, f64::max);
    let e: Vec<f64> = utilities.iter().map(|u| (u - top).exp()).collect();
    let denom = (-top).exp() + e.iter().sum::<f64>();
    e.iter().map(|v| v / denom).collect()
}

pub(crate) fn column_name(c: usize, market: &Market) -> String {
    if c == 0 {
        "price".into()
    } else if Some(c) == market.mu_col {
        "mu".into()
    } else {
        format!("x{c}")
    }
}

pub fn fit_mnl(train: &[Market]) -> Result<MnlFit> {
    let first = train
        .first()
        .ok_or_else(|| Error::Config("MNL fit needs at least one market".into()))?;
    let c = first.num_features();
    let n = crate::market::total_rows(train);
    let mut x = Vec::with_capacity(n * c);
    let mut y = Vec::with_capacity(n);
    for m in train {
        if m.num_features() != c {
            return Err(Error::shape(format!("market {} feature columns", m.id), c, m.num_features()));
        }
        let s0 = m.outside_share();
        if !(s0 > 0.0) {
            return Err(Error::Inversion {
                market: m.id,
                outside_share: s0,
            });
        }
        for (j, &s) in m.shares.iter().enumerate() {
            if !(s > 0.0) {
                return Err(Error::Validation(format!(
                    "market {} product {j}: share {s} cannot be inverted",
                    m.id
                )));
            }
            x.extend_from_slice(m.features.row(j));
            y.push((s / s0).ln());
        }
    }
    if n < c {
        return Err(Error::RankDeficient {
            column: n,
            name: column_name(n, first),
        });
    }
    let coef = least_squares(DMatrix::from_row_slice(n, c, &x), DVector::from_vec(y), |col| {
        column_name(col, first)
    })?;
    Ok(MnlFit {
        alpha: coef[0],
        beta: coef[1..].to_vec(),
    })
}

/// Least squares through a thin QR factorization; a vanishing diagonal of R
/// names the first collinear column.
pub(crate) fn least_squares(
    x: DMatrix<f64>,
    y: DVector<f64>,
    name: impl Fn(usize) -> String,
) -> Result<Vec<f64>> {
    let norms: Vec<f64> = x.column_iter().map(|c| c.norm()).collect();
    let qr = x.qr();
    let r = qr.r();
    for i in 0..r.ncols() {
        // |R_ii| is the part of column i not explained by earlier columns.
        if r[(i, i)].abs() <= RANK_TOL * norms[i] || norms[i] == 0.0 {
            return Err(Error::RankDeficient {
                column: i,
                name: name(i),
            });
        }
    }
    let qty = qr.q().transpose() * y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::NonFinite("triangular solve".into()))?;
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares coefficients".into()));
    }
    Ok(coef.iter().copied().collect())
}

impl SharePredictor for MnlFit {
    fn label(&self) -> String {
        "mnl".into()
    }

    fn predict_market(&self, market: &Market) -> Result<Vec<f64>> {
        let theta = self.coefficients();
        if market.num_features() != theta.len() {
            return Err(Error::shape("MNL feature columns", theta.len(), market.num_features()));
        }
        let u: Vec<f64> = (0..market.num_products())
            .map(|j| market.features.row(j).iter().zip(&theta).map(|(a, b)| a * b).sum())
            .collect();
        Ok(logit_shares(&u))
    }
}
