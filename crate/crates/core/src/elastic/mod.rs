//! Price elasticities of any share predictor, error metrics, and the
//! benchmark runner that compares estimators on simulated markets.

mod bench;

use serde::{Deserialize, Serialize};

pub use bench::{
    benchmark_run, elasticity_curve, fit_estimator, BenchmarkConfig, BenchmarkTables, CurvePoint,
    DeepSetSpec, Estimator, MetricRow,
};

use crate::error::{Error, Result};
use crate::market::Market;
use crate::predictor::SharePredictor;

/// How a price is perturbed for a finite-difference elasticity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum PriceShift {
    /// Relative change: `p → p·(1 + pct)`.
    Pct(f64),
    /// Absolute change in price units: `p → p + Δ`.
    Abs(f64),
}

impl PriceShift {
    pub fn validate(self) -> Result<()> {
        let v = match self {
            PriceShift::Pct(v) | PriceShift::Abs(v) => v,
        };
        if !v.is_finite() || v == 0.0 {
            return Err(Error::Config(format!("price shift {v} must be finite and nonzero")));
        }
        Ok(())
    }

    /// The perturbed price.
    pub fn apply(self, price: f64) -> f64 {
        match self {
            PriceShift::Pct(pct) => price * (1.0 + pct),
            PriceShift::Abs(d) => price + d,
        }
    }
}

/// `J × J` elasticities; entry `(j, k)` is the response of product `j`'s
/// share to product `k`'s price. `None` marks an undefined entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticityMatrix {
    pub j: usize,
    pub shift: PriceShift,
    entries: Vec<Option<f64>>,
}

impl ElasticityMatrix {
    pub fn get(&self, j: usize, k: usize) -> Option<f64> {
        self.entries[j * self.j + k]
    }

    pub fn own(&self) -> Vec<Option<f64>> {
        (0..self.j).map(|j| self.get(j, j)).collect()
    }

    /// Off-diagonal entries in row-major order.
    pub fn cross(&self) -> Vec<Option<f64>> {
        let mut out = Vec::with_capacity(self.j * self.j.saturating_sub(1));
        for j in 0..self.j {
            for k in 0..self.j {
                if j != k {
                    out.push(self.get(j, k));
                }
            }
        }
        out
    }

    pub fn num_undefined(&self) -> usize {
        self.entries.iter().filter(|e| e.is_none()).count()
    }
}

/// Finite-difference elasticities
/// `[(ŝ_j(p_k') − ŝ_j(p)) / ŝ_j(p)] / [(p_k' − p_k) / p_k]`.
///
/// Entries are undefined when the base share is not positive or the base
/// price is zero.
pub fn elasticity_matrix(
    predictor: &dyn SharePredictor,
    market: &Market,
    shift: PriceShift,
) -> Result<ElasticityMatrix> {
    shift.validate()?;
    let n = market.num_products();
    let base = predictor.predict_market(market)?;
    if base.len() != n {
        return Err(Error::shape("predicted shares", n, base.len()));
    }
    let mut entries = vec![None; n * n];
    for k in 0..n {
        let p = market.price(k);
        if p == 0.0 {
            continue;
        }
        let moved_price = shift.apply(p);
        let rel_dp = (moved_price - p) / p;
        let moved = predictor.predict_market(&market.with_price(k, moved_price))?;
        for j in 0..n {
            if base[j] > 0.0 {
                let e = (moved[j] - base[j]) / base[j] / rel_dp;
                if !e.is_finite() {
                    return Err(Error::NonFinite(format!("elasticity ({j}, {k})")));
                }
                entries[j * n + k] = Some(e);
            }
        }
    }
    Ok(ElasticityMatrix {
        j: n,
        shift,
        entries,
    })
}

/// Mean absolute error and root mean squared error of `predicted − truth`.
pub fn mae_rmse(predicted: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    if predicted.len() != truth.len() {
        return Err(Error::shape("error vectors", truth.len(), predicted.len()));
    }
    if predicted.is_empty() {
        return Err(Error::Config("cannot score empty vectors".into()));
    }
    let n = predicted.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, t) in predicted.iter().zip(truth) {
        let e = p - t;
        abs += e.abs();
        sq += e * e;
    }
    Ok((abs / n, (sq / n).sqrt()))
}

#[cfg(test)]
mod tests;
