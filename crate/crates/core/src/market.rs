//! Per-market data bundle shared by every estimator.
//!
//! Feature layout is fixed: column 0 is price, columns `1..=K` are the
//! exogenous characteristics, and an optional control-function residual μ
//! sits in the column named by `mu_col` (always the last one).

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Column index of price in every feature matrix.
pub const PRICE_COL: usize = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct Market {
    pub id: u64,
    pub product_ids: Vec<u64>,
    /// `J × K_in` features, price first.
    pub features: Matrix,
    /// Observed shares, one per product; the outside option absorbs the rest.
    pub shares: Vec<f64>,
    /// Optional `J × L` instrument matrix for the price first stage.
    pub instruments: Option<Matrix>,
    pub mu_col: Option<usize>,
}

impl Market {
    pub fn new(id: u64, features: Matrix, shares: Vec<f64>) -> Result<Self> {
        if shares.len() != features.rows() {
            return Err(Error::shape(
                format!("market {id} share vector"),
                features.rows(),
                shares.len(),
            ));
        }
        if features.cols() == 0 {
            return Err(Error::Validation(format!(
                "market {id} has no price column"
            )));
        }
        let product_ids = (0..features.rows() as u64).collect();
        Ok(Self {
            id,
            product_ids,
            features,
            shares,
            instruments: None,
            mu_col: None,
        })
    }

    pub fn num_products(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// Number of exogenous characteristics, excluding price and μ.
    pub fn num_characteristics(&self) -> usize {
        self.features.cols() - 1 - usize::from(self.mu_col.is_some())
    }

    pub fn price(&self, j: usize) -> f64 {
        self.features.get(j, PRICE_COL)
    }

    pub fn prices(&self) -> Vec<f64> {
        self.features.column(PRICE_COL)
    }

    /// Exogenous characteristics of product `j` (price and μ excluded).
    pub fn characteristics(&self, j: usize) -> &[f64] {
        let k = self.num_characteristics();
        &self.features.row(j)[1..1 + k]
    }

    /// Checks `0 < y_j < 1` and `Σ y_j < 1`.
    pub fn validate_shares(&self) -> Result<()> {
        for (j, &s) in self.shares.iter().enumerate() {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::Validation(format!(
                    "market {} product {j}: share {s} outside (0, 1)",
                    self.id
                )));
            }
        }
        let total: f64 = self.shares.iter().sum();
        if total >= 1.0 {
            return Err(Error::Validation(format!(
                "market {}: shares sum to {total} (must be < 1)",
                self.id
            )));
        }
        Ok(())
    }

    pub fn outside_share(&self) -> f64 {
        1.0 - self.shares.iter().sum::<f64>()
    }

    /// Copy with product `j`'s price replaced.
    pub fn with_price(&self, j: usize, price: f64) -> Market {
        let mut m = self.clone();
        m.features.set(j, PRICE_COL, price);
        m
    }

    /// Copy whose row `i` is this market's row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Market {
        Market {
            id: self.id,
            product_ids: perm.iter().map(|&i| self.product_ids[i]).collect(),
            features: self.features.select_rows(perm),
            shares: perm.iter().map(|&i| self.shares[i]).collect(),
            instruments: self.instruments.as_ref().map(|z| z.select_rows(perm)),
            mu_col: self.mu_col,
        }
    }
}

/// Total number of product rows across markets.
pub fn total_rows(markets: &[Market]) -> usize {
    markets.iter().map(Market::num_products).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn market() -> Market {
        let f = Matrix::from_rows(&[vec![1.0, 0.2], vec![2.0, -0.3], vec![3.0, 0.0]]).unwrap();
        Market::new(4, f, vec![0.2, 0.3, 0.1]).unwrap()
    }

    #[test]
    fn basic_accessors() {
        let m = market();
        assert_eq!(m.num_products(), 3);
        assert_eq!(m.prices(), vec![1.0, 2.0, 3.0]);
        assert_eq!(m.characteristics(1), &[-0.3]);
        assert!((m.outside_share() - 0.4).abs() < 1e-15);
        m.validate_shares().unwrap();
    }

    #[test]
    fn invalid_shares() {
        let mut m = market();
        m.shares = vec![0.5, 0.4, 0.2];
        assert!(m.validate_shares().is_err());
        m.shares = vec![0.0, 0.4, 0.2];
        assert!(m.validate_shares().is_err());
        assert!(Market::new(1, Matrix::zeros(2, 2), vec![0.1]).is_err());
    }

    #[test]
    fn permute_and_reprice() {
        let m = market();
        let p = m.permuted(&[2, 0, 1]);
        assert_eq!(p.prices(), vec![3.0, 1.0, 2.0]);
        assert_eq!(p.product_ids, vec![2, 0, 1]);
        assert_eq!(m.with_price(1, 9.0).price(1), 9.0);
    }
}
