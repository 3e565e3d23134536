//! Market collections, train/test splits and the dataset CSV format.
//!
//! CSV columns: `market_id, product_id, price, x1..xK, share[, mu]`, one row
//! per product and market, header first. Floats are written in their
//! shortest round-trip form so a write/read cycle is lossless.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TruthModel;
use crate::error::{Error, Result};
use crate::market::Market;
use crate::nn::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub markets: Vec<Market>,
    pub truth: Option<TruthModel>,
    pub split: Option<SplitTag>,
}

impl Dataset {
    pub fn new(markets: Vec<Market>, truth: Option<TruthModel>) -> Self {
        Self {
            markets,
            truth,
            split: None,
        }
    }

    pub fn num_markets(&self) -> usize {
        self.markets.len()
    }

    pub fn num_rows(&self) -> usize {
        crate::market::total_rows(&self.markets)
    }

    /// `Some(J)` when every market has the same number of products.
    pub fn common_j(&self) -> Option<usize> {
        let first = self.markets.first()?.num_products();
        self.markets
            .iter()
            .all(|m| m.num_products() == first)
            .then_some(first)
    }
}

/// Splits by market: `round(ratio·M)` markets go to the training side.
/// Ratios that would leave either side empty are rejected.
pub fn split(dataset: &Dataset, ratio: f64, rng: &mut impl Rng) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let m = dataset.num_markets();
    let n_train = (ratio * m as f64).round() as usize;
    if n_train == 0 || n_train >= m {
        return Err(Error::Config(format!(
            "split ratio {ratio} leaves an empty side for {m} markets"
        )));
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(rng);
    let (mut a, mut b) = (idx[..n_train].to_vec(), idx[n_train..].to_vec());
    a.sort_unstable();
    b.sort_unstable();
    let take = |ids: &[usize], tag| Dataset {
        markets: ids.iter().map(|&i| dataset.markets[i].clone()).collect(),
        truth: dataset.truth.clone(),
        split: Some(tag),
    };
    Ok((take(&a, SplitTag::Train), take(&b, SplitTag::Test)))
}

pub fn write_dataset_csv(markets: &[Market], path: impl AsRef<Path>) -> Result<()> {
    let first = markets
        .first()
        .ok_or_else(|| Error::Config("cannot write an empty dataset".into()))?;
    let k = first.num_characteristics();
    let with_mu = first.mu_col.is_some();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["market_id".to_string(), "product_id".into(), "price".into()];
    header.extend((1..=k).map(|i| format!("x{i}")));
    header.push("share".into());
    if with_mu {
        header.push("mu".into());
    }
    w.write_record(&header)?;
    for m in markets {
        if m.num_characteristics() != k || m.mu_col.is_some() != with_mu {
            return Err(Error::shape(
                format!("market {} feature columns", m.id),
                first.num_features(),
                m.num_features(),
            ));
        }
        for j in 0..m.num_products() {
            let mut rec = vec![m.id.to_string(), m.product_ids[j].to_string(), m.price(j).to_string()];
            rec.extend(m.characteristics(j).iter().map(f64::to_string));
            rec.push(m.shares[j].to_string());
            if let Some(c) = m.mu_col {
                rec.push(m.features.get(j, c).to_string());
            }
            w.write_record(&rec)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::util::write_atomic(path.as_ref(), &bytes)
}

pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<Vec<Market>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let need = |name: &str| {
        col(name).ok_or_else(|| Error::Validation(format!("dataset is missing column '{name}'")))
    };
    let (c_market, c_product, c_price, c_share) =
        (need("market_id")?, need("product_id")?, need("price")?, need("share")?);
    let mut x_cols = Vec::new();
    while let Some(c) = col(&format!("x{}", x_cols.len() + 1)) {
        x_cols.push(c);
    }
    let c_mu = col("mu");

    let mut order: Vec<u64> = Vec::new();
    let mut groups: HashMap<u64, (Vec<u64>, Vec<Vec<f64>>, Vec<f64>)> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = i + 2;
        let int = |c: usize| -> Result<u64> {
            rec[c].trim().parse().map_err(|_| {
                Error::Validation(format!("row {row_no}: '{}' is not an integer id", &rec[c]))
            })
        };
        let real = |c: usize| -> Result<f64> {
            let v: f64 = rec[c].trim().parse().map_err(|_| {
                Error::Validation(format!("row {row_no}: '{}' is not a number", &rec[c]))
            })?;
            if !v.is_finite() {
                return Err(Error::Validation(format!("row {row_no}: non-finite value")));
            }
            Ok(v)
        };
        let market = int(c_market)?;
        let mut feats = vec![real(c_price)?];
        for &c in &x_cols {
            feats.push(real(c)?);
        }
        if let Some(c) = c_mu {
            feats.push(real(c)?);
        }
        let entry = groups.entry(market).or_insert_with(|| {
            order.push(market);
            Default::default()
        });
        entry.0.push(int(c_product)?);
        entry.1.push(feats);
        entry.2.push(real(c_share)?);
    }
    order
        .into_iter()
        .map(|id| {
            let (products, rows, shares) = groups.remove(&id).expect("grouped market");
            let mut m = Market::new(id, Matrix::from_rows(&rows)?, shares)?;
            m.product_ids = products;
            if c_mu.is_some() {
                m.mu_col = Some(m.num_features() - 1);
            }
            Ok(m)
        })
        .collect()
}
