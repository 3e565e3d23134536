//! Automobile market data: the per-car CSV schema, BLP-style instruments and
//! a synthetic generator with endogenous prices.
//!
//! CSV columns (header required, any order):
//! `year, firm_id, model, price, hp, space, mpd, ac, share, region, wage, exchange_rate`.
//! Prices are in thousands of dollars. Each year is one market.

use std::collections::BTreeMap;
use std::path::Path;

use deepchoice::nn::{Matrix, RngStream};
use deepchoice::{Error, Market, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

pub const AUTO_COLUMNS: [&str; 12] = [
    "year",
    "firm_id",
    "model",
    "price",
    "hp",
    "space",
    "mpd",
    "ac",
    "share",
    "region",
    "wage",
    "exchange_rate",
];

/// Characteristics entering demand and the instrument sums, in column order.
pub const CHARACTERISTICS: [&str; 4] = ["hp", "space", "mpd", "ac"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoRecord {
    pub year: u32,
    pub firm_id: u32,
    pub model: String,
    /// Thousands of dollars.
    pub price: f64,
    pub hp: f64,
    pub space: f64,
    /// Miles per dollar.
    pub mpd: f64,
    pub ac: f64,
    pub share: f64,
    pub region: String,
    pub wage: f64,
    pub exchange_rate: f64,
}

impl AutoRecord {
    pub fn characteristics(&self) -> [f64; 4] {
        [self.hp, self.space, self.mpd, self.ac]
    }
}

/// Records grouped by year, plus the matching markets (features
/// `price, hp, space, mpd, ac`; market id = year).
#[derive(Clone, Debug)]
pub struct AutoData {
    pub years: Vec<Vec<AutoRecord>>,
    pub markets: Vec<Market>,
}

impl AutoData {
    pub fn from_records(records: Vec<AutoRecord>) -> Result<Self> {
        let mut by_year: BTreeMap<u32, Vec<AutoRecord>> = BTreeMap::new();
        for r in records {
            by_year.entry(r.year).or_default().push(r);
        }
        let mut years = Vec::with_capacity(by_year.len());
        let mut markets = Vec::with_capacity(by_year.len());
        for (year, recs) in by_year {
            let total: f64 = recs.iter().map(|r| r.share).sum();
            if total >= 1.0 {
                return Err(Error::Validation(format!(
                    "year {year}: shares sum to {total} (must be < 1)"
                )));
            }
            let rows: Vec<Vec<f64>> = recs
                .iter()
                .map(|r| {
                    let mut row = vec![r.price];
                    row.extend(r.characteristics());
                    row
                })
                .collect();
            let m = Market::new(
                u64::from(year),
                Matrix::from_rows(&rows)?,
                recs.iter().map(|r| r.share).collect(),
            )?;
            m.validate_shares()?;
            markets.push(m);
            years.push(recs);
        }
        if markets.is_empty() {
            return Err(Error::Validation("auto data has no rows".into()));
        }
        Ok(Self { years, markets })
    }

    pub fn records(&self) -> impl Iterator<Item = &AutoRecord> {
        self.years.iter().flatten()
    }
}

fn check_record(r: &AutoRecord, row_no: usize) -> Result<()> {
    let named = [
        ("price", r.price),
        ("hp", r.hp),
        ("space", r.space),
        ("mpd", r.mpd),
        ("ac", r.ac),
        ("share", r.share),
        ("wage", r.wage),
        ("exchange_rate", r.exchange_rate),
    ];
    for (name, v) in named {
        if !v.is_finite() {
            return Err(Error::Validation(format!("row {row_no}: {name} is not finite")));
        }
    }
    if !(r.price > 0.0) {
        return Err(Error::Validation(format!(
            "row {row_no}: price {} must be positive",
            r.price
        )));
    }
    if !(r.share > 0.0 && r.share < 1.0) {
        return Err(Error::Validation(format!(
            "row {row_no}: share {} outside (0, 1)",
            r.share
        )));
    }
    Ok(())
}

/// Reads and validates an auto CSV. Row numbers in errors count the header
/// as row 1.
pub fn load_auto_csv(path: impl AsRef<Path>) -> Result<AutoData> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    for col in AUTO_COLUMNS {
        if !header.iter().any(|h| h.trim() == col) {
            return Err(Error::Validation(format!("auto data is missing column '{col}'")));
        }
    }
    let mut records = Vec::new();
    for (i, rec) in rdr.deserialize::<AutoRecord>().enumerate() {
        let row_no = i + 2;
        let r = rec.map_err(|e| Error::Validation(format!("row {row_no}: {e}")))?;
        check_record(&r, row_no)?;
        records.push(r);
    }
    AutoData::from_records(records)
}

pub fn write_auto_csv(records: &[AutoRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    deepchoice::util::write_atomic(path.as_ref(), &bytes)
}

/// Instrument columns, in order: `own_<c>` for each characteristic, then
/// `rival_<c>`, then `wage`, `exchange_rate`.
pub fn instrument_names() -> Vec<String> {
    let mut names: Vec<String> = CHARACTERISTICS.iter().map(|c| format!("own_{c}")).collect();
    names.extend(CHARACTERISTICS.iter().map(|c| format!("rival_{c}")));
    names.push("wage".into());
    names.push("exchange_rate".into());
    names
}

/// Per-row instruments for one year: same-firm sums of characteristics
/// excluding the car itself, rival-firm sums, and the cost shifters.
pub fn blp_instruments(year: &[AutoRecord]) -> Result<Matrix> {
    let k = CHARACTERISTICS.len();
    let mut firm_sum: BTreeMap<u32, [f64; 4]> = BTreeMap::new();
    let mut total = [0.0; 4];
    for r in year {
        let s = firm_sum.entry(r.firm_id).or_insert([0.0; 4]);
        for (c, x) in r.characteristics().iter().enumerate() {
            s[c] += x;
            total[c] += x;
        }
    }
    if firm_sum.len() == 1 {
        if let Some(r) = year.first() {
            log::warn!("year {}: a single firm, rival-firm instruments are all zero", r.year);
        }
    }
    let rows: Vec<Vec<f64>> = year
        .iter()
        .map(|r| {
            let x = r.characteristics();
            let own = &firm_sum[&r.firm_id];
            let mut row = Vec::with_capacity(2 * k + 2);
            row.extend((0..k).map(|c| own[c] - x[c]));
            row.extend((0..k).map(|c| total[c] - own[c]));
            row.push(r.wage);
            row.push(r.exchange_rate);
            row
        })
        .collect();
    Matrix::from_rows(&rows)
}

/// Attaches [`blp_instruments`] to every market.
pub fn build_blp_instruments(data: &mut AutoData) -> Result<()> {
    for (recs, m) in data.years.iter().zip(data.markets.iter_mut()) {
        m.instruments = Some(blp_instruments(recs)?);
    }
    Ok(())
}

/// Synthetic auto data with prices driven by an unobserved quality that
/// also raises demand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticAutos {
    pub first_year: u32,
    pub years: usize,
    pub firms: usize,
    pub min_models: usize,
    pub max_models: usize,
    /// Price response to unobserved quality, in $1000s per unit.
    pub price_on_quality: f64,
    /// Utility weight of unobserved quality.
    pub quality_utility: f64,
    /// Mean price sensitivity per $1000.
    pub alpha_mean: f64,
    pub alpha_sd: f64,
    /// Price response to the standardized cost-shifter index.
    pub cost_pass_through: f64,
    pub seed: u64,
}

impl Default for SyntheticAutos {
    fn default() -> Self {
        Self {
            first_year: 1971,
            years: 20,
            firms: 6,
            min_models: 2,
            max_models: 4,
            price_on_quality: 2.0,
            quality_utility: 2.0,
            alpha_mean: 0.3,
            alpha_sd: 0.05,
            cost_pass_through: 2.0,
            seed: 0,
        }
    }
}

const REGIONS: [&str; 3] = ["us", "eu", "jp"];
const CONSUMER_DRAWS: usize = 500;

impl SyntheticAutos {
    pub fn validate(&self) -> Result<()> {
        if self.years == 0 || self.firms == 0 || self.min_models == 0 || self.max_models < self.min_models {
            return Err(Error::Config("synthetic autos need positive years, firms and model counts".into()));
        }
        if !(self.alpha_mean > 0.0 && self.alpha_sd >= 0.0) {
            return Err(Error::Config("alpha_mean must be positive and alpha_sd non-negative".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Vec<AutoRecord>> {
        self.validate()?;
        let mut rng = RngStream::new(self.seed, 0x6175_746f);
        let firm_region: Vec<usize> = (0..self.firms).map(|f| f % REGIONS.len()).collect();
        let alpha = Normal::new(self.alpha_mean, self.alpha_sd)
            .map_err(|e| Error::Config(format!("price sensitivity: {e}")))?;
        let alphas: Vec<f64> = (0..CONSUMER_DRAWS).map(|_| alpha.sample(&mut rng).max(0.0)).collect();
        let mut out = Vec::new();
        for t in 0..self.years {
            let year = self.first_year + t as u32;
            let wage: Vec<f64> = REGIONS.iter().map(|_| rng.random_range(0.5..1.5)).collect();
            let fx: Vec<f64> = REGIONS.iter().map(|_| rng.random_range(0.5..1.5)).collect();
            let mut cars = Vec::new();
            for f in 0..self.firms {
                let n = rng.random_range(self.min_models..=self.max_models);
                for i in 0..n {
                    let hp: f64 = rng.random_range(0.3..3.5);
                    let space: f64 = 1.0 + 0.3 * rng.sample::<f64, _>(StandardNormal).abs();
                    let mpd: f64 = rng.random_range(1.0..4.0);
                    let ac = if rng.random_bool(0.4) { 1.0 } else { 0.0 };
                    let xi: f64 = rng.sample(StandardNormal);
                    let r = firm_region[f];
                    let noise: f64 = rng.sample(StandardNormal);
                    // wage and exchange rate are U(0.5, 1.5); their sum has variance 1/6
                    let cost = (wage[r] + fx[r] - 2.0) * 6f64.sqrt();
                    let price = (3.0 + 4.0 * hp + 2.0 * ac
                        + self.cost_pass_through * cost
                        + self.price_on_quality * xi
                        + 0.5 * noise)
                        .max(0.5);
                    let delta = -1.0 + 0.5 * hp + 0.5 * space + 0.2 * mpd + 0.5 * ac + self.quality_utility * xi;
                    cars.push((
                        AutoRecord {
                            year,
                            firm_id: f as u32 + 1,
                            model: format!("f{}m{}", f + 1, i + 1),
                            price,
                            hp,
                            space,
                            mpd,
                            ac,
                            share: 0.0,
                            region: REGIONS[r].into(),
                            wage: wage[r],
                            exchange_rate: fx[r],
                        },
                        delta,
                    ));
                }
            }
            let mut shares = vec![0.0; cars.len()];
            for &a in &alphas {
                let u: Vec<f64> = cars.iter().map(|(c, d)| d - a * c.price).collect();
                let top = u.iter().copied().fold(0.0f64, f64::max);
                let e: Vec<f64> = u.iter().map(|v| (v - top).exp()).collect();
                let denom = (-top).exp() + e.iter().sum::<f64>();
                for (s, v) in shares.iter_mut().zip(&e) {
                    *s += v / denom / CONSUMER_DRAWS as f64;
                }
            }
            for ((mut c, _), s) in cars.into_iter().zip(shares) {
                c.share = s.max(1e-12);
                out.push(c);
            }
        }
        Ok(out)
    }
}
