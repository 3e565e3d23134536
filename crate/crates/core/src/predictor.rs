//! The common interface every share predictor implements.

use crate::error::Result;
use crate::market::Market;

/// Maps a market's feature matrix to one predicted share per product.
pub trait SharePredictor: Send + Sync {
    fn label(&self) -> String;

    fn predict_market(&self, market: &Market) -> Result<Vec<f64>>;
}

/// Adapts a closure into a [`SharePredictor`].
pub struct FnPredictor<F> {
    label: String,
    f: F,
}

impl<F> FnPredictor<F>
where
    F: Fn(&Market) -> Result<Vec<f64>> + Send + Sync,
{
    pub fn new(label: impl Into<String>, f: F) -> Self {
        Self {
            label: label.into(),
            f,
        }
    }
}

impl<F> SharePredictor for FnPredictor<F>
where
    F: Fn(&Market) -> Result<Vec<f64>> + Send + Sync,
{
    fn label(&self) -> String {
        self.label.clone()
    }

    fn predict_market(&self, market: &Market) -> Result<Vec<f64>> {
        (self.f)(market)
    }
}

impl<T: SharePredictor + ?Sized> SharePredictor for &T {
    fn label(&self) -> String {
        (**self).label()
    }

    fn predict_market(&self, market: &Market) -> Result<Vec<f64>> {
        (**self).predict_market(market)
    }
}

impl<T: SharePredictor + ?Sized> SharePredictor for Box<T> {
    fn label(&self) -> String {
        (**self).label()
    }

    fn predict_market(&self, market: &Market) -> Result<Vec<f64>> {
        (**self).predict_market(market)
    }
}
