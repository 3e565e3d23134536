use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Market;
use crate::predictor::SharePredictor;

/// Predicts the grand mean training share for every product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanPredictor {
    pub mean_share: f64,
}

pub fn fit_mean(train: &[Market]) -> Result<MeanPredictor> {
    let n = crate::market::total_rows(train);
    if n == 0 {
        return Err(Error::Config("mean predictor needs at least one product row".into()));
    }
    let sum: f64 = train.iter().flat_map(|m| &m.shares).sum();
    Ok(MeanPredictor {
        mean_share: sum / n as f64,
    })
}

impl SharePredictor for MeanPredictor {
    fn label(&self) -> String {
        "mean".into()
    }

    fn predict_market(&self, market: &Market) -> Result<Vec<f64>> {
        Ok(vec![self.mean_share; market.num_products()])
    }
}
