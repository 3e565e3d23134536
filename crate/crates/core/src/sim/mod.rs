//! Synthetic markets for benchmarking.
//!
//! Prices are `U[0,4]` and characteristics `N(0,1)`, i.i.d. over
//! (market, product). Utilities are `α_i·g(price) + β_i·g(x)` where `g` is
//! the identity or one of the nonlinear transforms; the transform is applied
//! inside utilities only and estimators always see raw features.
//!
//! Normal distributions are written `N(mean, variance)` throughout.

mod dataset;
mod truth;

use rand::Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dataset::{read_dataset_csv, split, write_dataset_csv, Dataset, SplitTag};
pub use truth::{true_elasticity, CoefDist, TruthModel};

use crate::error::{Error, Result};
use crate::market::Market;
use crate::nn::{stream_id, Matrix, RngStream};

/// Data-generating process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dgp {
    /// Fixed coefficients; shares are argmax frequencies of Gumbel utilities.
    Mnl,
    /// Normal random coefficients; shares average the per-draw logit.
    Rcl,
    /// RCL on the log-type transform of price.
    RclLog,
    /// RCL on `sin(price)`.
    RclSin,
    /// RCL where a price-dependent fraction of consumers skips the most
    /// expensive product.
    Inattention,
}

impl Dgp {
    pub fn transform(self) -> Transform {
        match self {
            Dgp::RclLog => Transform::Log,
            Dgp::RclSin => Transform::Sin,
            _ => Transform::Identity,
        }
    }

    pub fn is_mnl(self) -> bool {
        self == Dgp::Mnl
    }

    pub fn name(self) -> &'static str {
        match self {
            Dgp::Mnl => "mnl",
            Dgp::Rcl => "rcl",
            Dgp::RclLog => "rcl_log",
            Dgp::RclSin => "rcl_sin",
            Dgp::Inattention => "inattention",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// `log(|16x − 8| + 1)·sign(x − 0.5)`
    Log,
    Sin,
}

/// The utility transform `g`.
pub fn apply_nonlinear(tag: Transform, x: f64) -> f64 {
    match tag {
        Transform::Identity => x,
        Transform::Log => {
            let s = x - 0.5;
            let sign = if s > 0.0 {
                1.0
            } else if s < 0.0 {
                -1.0
            } else {
                0.0
            };
            ((16.0 * x - 8.0).abs() + 1.0).ln() * sign
        }
        Transform::Sin => x.sin(),
    }
}

/// Coefficient distributions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefPreset {
    /// MNL: `α = −1, β = 1`. RCL: `α ~ N(−1, 1)`, `β_k ~ N(μ_k, 1)` with
    /// `μ_k ~ N(0, 1/(2K))` drawn once per truth model.
    Baseline,
    /// MNL: `α = −1, β = 1`. RCL: `α ~ N(−1, 0.5)`, `β_k ~ N(1, 0.5)`.
    Coverage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub j: usize,
    pub m: usize,
    pub k: usize,
    /// Simulated consumers per market (MNL) or coefficient draws (RCL).
    pub n_consumers: usize,
    pub dgp: Dgp,
    pub coef: CoefPreset,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            j: 10,
            m: 100,
            k: 10,
            n_consumers: 10_000,
            dgp: Dgp::Rcl,
            coef: CoefPreset::Baseline,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.j == 0 || self.m == 0 || self.n_consumers == 0 {
            return Err(Error::Config(format!(
                "J, M and N must be positive (J={}, M={}, N={})",
                self.j, self.m, self.n_consumers
            )));
        }
        if matches!(self.dgp, Dgp::Inattention | Dgp::RclLog | Dgp::RclSin) && self.k != 0 {
            return Err(Error::Config(format!(
                "the {} design is price-only; got K={}",
                self.dgp.name(),
                self.k
            )));
        }
        Ok(())
    }

    /// Named designs used by the experiment runner.
    pub fn preset(name: &str) -> Result<SimConfig> {
        let base = SimConfig::default();
        let cfg = match name {
            "baseline-rcl" => base,
            "baseline-mnl" => SimConfig { dgp: Dgp::Mnl, ..base },
            "rcl-log" => SimConfig { dgp: Dgp::RclLog, k: 0, ..base },
            "rcl-sin" => SimConfig { dgp: Dgp::RclSin, k: 0, ..base },
            "inattention" => SimConfig { dgp: Dgp::Inattention, j: 2, m: 1000, k: 0, ..base },
            "coverage" | "coverage-rcl" => SimConfig {
                j: 3,
                m: 100,
                k: 5,
                coef: CoefPreset::Coverage,
                ..base
            },
            "coverage-mnl" => SimConfig {
                j: 3,
                m: 100,
                k: 5,
                dgp: Dgp::Mnl,
                coef: CoefPreset::Coverage,
                ..base
            },
            other => return Err(Error::Config(format!("unknown preset '{other}'"))),
        };
        Ok(cfg)
    }
}

const FEATURE_STREAM: u64 = 0x6665_6174;
const CHOICE_STREAM: u64 = 0x6368_6f69;
const TRUTH_STREAM: u64 = 0x7472_7574;

/// Draws a `J × (1+K)` feature matrix: price `U[0,4]`, then `K` standard
/// normal characteristics.
pub fn draw_features(j: usize, k: usize, rng: &mut impl Rng) -> Matrix {
    let mut f = Matrix::zeros(j, 1 + k);
    for r in 0..j {
        let row = f.row_mut(r);
        row[0] = rng.random_range(0.0..4.0);
        for v in &mut row[1..] {
            *v = rng.sample(StandardNormal);
        }
    }
    f
}

/// Feature matrices for every market, each on its own random stream.
pub fn gen_features(cfg: &SimConfig) -> Result<Vec<Matrix>> {
    cfg.validate()?;
    Ok((0..cfg.m)
        .into_par_iter()
        .map(|m| {
            let mut rng = RngStream::new(cfg.seed, stream_id(&[FEATURE_STREAM, m as u64]));
            draw_features(cfg.j, cfg.k, &mut rng)
        })
        .collect())
}

/// The truth model implied by a config, drawn from its own stream.
pub fn truth_for(cfg: &SimConfig) -> Result<TruthModel> {
    cfg.validate()?;
    let mut rng = RngStream::new(cfg.seed, stream_id(&[TRUTH_STREAM]));
    let dist = CoefDist::for_preset(cfg.coef, cfg.dgp, cfg.k, &mut rng);
    let draws = if cfg.dgp.is_mnl() { 1 } else { cfg.n_consumers };
    TruthModel::sample(cfg.dgp, &dist, draws, &mut rng)
}

/// Generates a dataset for any design; dispatches on `cfg.dgp`.
pub fn simulate(cfg: &SimConfig) -> Result<Dataset> {
    match cfg.dgp {
        Dgp::Mnl => simulate_mnl(cfg),
        Dgp::Inattention => simulate_inattention(cfg),
        _ => simulate_rcl(cfg),
    }
}

/// MNL shares as argmax frequencies over `N` consumers with Gumbel noise on
/// every alternative, the outside option having mean utility 0.
///
/// Cells with zero simulated choices receive half a count before
/// normalization so every observed share stays inside (0, 1).
pub fn simulate_mnl(cfg: &SimConfig) -> Result<Dataset> {
    if cfg.dgp != Dgp::Mnl {
        return Err(Error::Config(format!("simulate_mnl called with {}", cfg.dgp.name())));
    }
    simulate_with_truth(cfg, truth_for(cfg)?)
}

/// Markets drawn from `cfg` with shares generated by a given truth model:
/// argmax frequencies over `N` consumers for MNL, exact draw averages
/// otherwise.
pub fn simulate_with_truth(cfg: &SimConfig, truth: TruthModel) -> Result<Dataset> {
    if truth.dgp() != cfg.dgp {
        return Err(Error::Config(format!(
            "truth model is {} but the design is {}",
            truth.dgp().name(),
            cfg.dgp.name()
        )));
    }
    let features = gen_features(cfg)?;
    let markets = features
        .into_par_iter()
        .enumerate()
        .map(|(m, f)| {
            let shares = if cfg.dgp.is_mnl() {
                let mut rng = RngStream::new(cfg.seed, stream_id(&[CHOICE_STREAM, m as u64]));
                argmax_shares(&truth.mean_utilities(&f)?, cfg.n_consumers, &mut rng)
            } else {
                truth.shares(&f)?
            };
            Market::new(m as u64, f, shares)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(markets, Some(truth)))
}

/// Frequencies of `argmax(v_j + ε_j, ε_0)` over `n` consumers, with the
/// half-count correction for empty cells.
pub fn argmax_shares(v: &[f64], n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    let mut counts = vec![0.0f64; v.len() + 1];
    for _ in 0..n {
        let mut best = gumbel.sample(rng);
        let mut arg = 0;
        for (j, vj) in v.iter().enumerate() {
            let u = vj + gumbel.sample(rng);
            if u > best {
                best = u;
                arg = j + 1;
            }
        }
        counts[arg] += 1.0;
    }
    for c in counts.iter_mut() {
        if *c == 0.0 {
            *c = 0.5;
        }
    }
    let total: f64 = counts.iter().sum();
    counts[1..].iter().map(|c| c / total).collect()
}

/// RCL-family shares (`Rcl`, `RclLog`, `RclSin`, `Inattention`): the mean
/// over frozen coefficient draws of the per-draw logit probabilities.
pub fn simulate_rcl(cfg: &SimConfig) -> Result<Dataset> {
    if cfg.dgp == Dgp::Mnl {
        return Err(Error::Config("simulate_rcl needs a random-coefficient design".into()));
    }
    simulate_with_truth(cfg, truth_for(cfg)?)
}


/// Price-only RCL where a fraction `1 − 1/(1+p_max)` of consumers never
/// considers the highest-priced product (lowest index on ties). Those
/// consumers still choose between the remaining products and the outside
/// option.
pub fn simulate_inattention(cfg: &SimConfig) -> Result<Dataset> {
    if cfg.dgp != Dgp::Inattention {
        return Err(Error::Config(format!(
            "simulate_inattention called with {}",
            cfg.dgp.name()
        )));
    }
    simulate_rcl(cfg)
}

/// Appends one product with fresh features from the simulation
/// distributions and recomputes every true share.
pub fn add_new_product(
    market: &Market,
    truth: &TruthModel,
    rng: &mut impl Rng,
) -> Result<(Market, Vec<f64>)> {
    let k = market.num_characteristics();
    let row = draw_features(1, k, rng);
    add_product_row(market, truth, row.row(0))
}

/// Appends a given product row (price first) and recomputes true shares.
pub fn add_product_row(market: &Market, truth: &TruthModel, row: &[f64]) -> Result<(Market, Vec<f64>)> {
    if market.mu_col.is_some() {
        return Err(Error::Config("cannot add a product to a market with a residual column".into()));
    }
    let parts = Matrix::from_rows(&[row])?;
    let features = Matrix::vstack(&[&market.features, &parts])?;
    let shares = truth.shares(&features)?;
    let mut out = Market::new(market.id, features, shares.clone())?;
    let next = market.product_ids.iter().max().map_or(0, |m| m + 1);
    out.product_ids = market.product_ids.iter().copied().chain([next]).collect();
    Ok((out, shares))
}

#[cfg(test)]
mod tests;
