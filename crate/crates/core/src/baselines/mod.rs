//! Comparator estimators: multinomial logit by log-share inversion,
//! random-coefficients logit by simulated share matching, a stacked
//! fixed-width network tuned by cross-validation, and the grand-mean share.

mod mean;
mod mnl;
mod rcl;
mod stacked;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use mean::{fit_mean, MeanPredictor};
pub use mnl::{fit_mnl, logit_shares, MnlFit};
pub(crate) use mnl::least_squares;
pub use rcl::{fit_rcl, RclConfig, RclFit};
pub use stacked::{fit_stacked_np, StackedGrid, StackedHyper, StackedNpModel};

use crate::error::{Error, Result};
use crate::market::Market;
use crate::predictor::SharePredictor;

pub const BASELINE_FORMAT_VERSION: u32 = 1;
const BASELINE_FORMAT: &str = "deepchoice-baseline";

/// Any fitted comparator, tagged by estimator for serialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum BaselineFit {
    Mnl(MnlFit),
    Rcl(RclFit),
    StackedNp(StackedNpModel),
    Mean(MeanPredictor),
}

#[derive(Serialize, Deserialize)]
struct BaselineFile {
    format: String,
    version: u32,
    fit: BaselineFit,
}

impl BaselineFit {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let file = BaselineFile {
            format: BASELINE_FORMAT.into(),
            version: BASELINE_FORMAT_VERSION,
            fit: self.clone(),
        };
        serde_json::to_vec_pretty(&file).map_err(|e| Error::Corrupt(e.to_string()))
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let raw: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| Error::Corrupt(e.to_string()))?;
        crate::nn::serialize_check_header(&raw, BASELINE_FORMAT, BASELINE_FORMAT_VERSION)?;
        let file: BaselineFile =
            serde_json::from_value(raw).map_err(|e| Error::Corrupt(e.to_string()))?;
        Ok(file.fit)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::util::write_atomic(path.as_ref(), &self.to_json()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read(path)?)
    }

    fn inner(&self) -> &dyn SharePredictor {
        match self {
            BaselineFit::Mnl(f) => f,
            BaselineFit::Rcl(f) => f,
            BaselineFit::StackedNp(f) => f,
            BaselineFit::Mean(f) => f,
        }
    }
}

impl SharePredictor for BaselineFit {
    fn label(&self) -> String {
        self.inner().label()
    }

    fn predict_market(&self, market: &Market) -> Result<Vec<f64>> {
        self.inner().predict_market(market)
    }
}

/// Mean squared share error of `predictor` over every product row.
pub fn share_mse(predictor: &dyn SharePredictor, markets: &[Market]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for m in markets {
        let p = predictor.predict_market(m)?;
        sum += p.iter().zip(&m.shares).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        n += p.len();
    }
    if n == 0 {
        return Err(Error::Config("no product rows to evaluate".into()));
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests;
