//! Own-price elasticities for automobile data, with an optional
//! control-function correction built from BLP instruments.

use deepchoice::causal::{augment_with_residuals, fit_first_stage, FirstStageFit, FirstStageSpec};
use deepchoice::deepset::{train, DeepSetModel};
use deepchoice::elastic::{elasticity_matrix, DeepSetSpec, PriceShift};
use deepchoice::nn::RngStream;
use deepchoice::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::autos::{build_blp_instruments, AutoData};

pub const HIGH_PRICE: f64 = 20.0;
pub const LOW_PRICE: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IvMode {
    None,
    Blp,
}

impl IvMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(IvMode::None),
            "blp" => Ok(IvMode::Blp),
            other => Err(Error::Config(format!("unknown iv mode '{other}' (expected none or blp)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceCategory {
    High,
    Medium,
    Low,
}

impl PriceCategory {
    /// High at or above $20k, medium from $8k, low below.
    pub fn of(price: f64) -> Self {
        if price >= HIGH_PRICE {
            PriceCategory::High
        } else if price >= LOW_PRICE {
            PriceCategory::Medium
        } else {
            PriceCategory::Low
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmpiricalConfig {
    pub iv: IvMode,
    /// Price change in $1000s.
    pub delta: f64,
    pub first_stage: FirstStageSpec,
    pub deepset: DeepSetSpec,
}

impl Default for EmpiricalConfig {
    fn default() -> Self {
        let mut deepset = DeepSetSpec::default();
        deepset.train.epochs = 2000;
        deepset.train.lr = 1e-3;
        deepset.train.lr_decay = 0.1;
        Self {
            iv: IvMode::Blp,
            delta: 1.0,
            first_stage: FirstStageSpec::Ols,
            deepset,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticityRow {
    pub year: u32,
    pub firm_id: u32,
    pub model: String,
    pub price: f64,
    pub share: f64,
    pub category: PriceCategory,
    pub own_elasticity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub category: PriceCategory,
    pub n: usize,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub share_positive: f64,
}

#[derive(Clone, Debug)]
pub struct EmpiricalResult {
    pub rows: Vec<ElasticityRow>,
    pub summary: Vec<CategorySummary>,
    pub first_stage: Option<FirstStageFit>,
}

/// Mean with a normal-approximation 95% interval.
fn summarize(category: PriceCategory, v: &[f64]) -> CategorySummary {
    let n = v.len();
    let mean = deepchoice::util::mean(v);
    let half = if n > 1 {
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        1.96 * (var / n as f64).sqrt()
    } else {
        f64::NAN
    };
    CategorySummary {
        category,
        n,
        mean,
        ci_lo: mean - half,
        ci_hi: mean + half,
        share_positive: if n == 0 {
            f64::NAN
        } else {
            v.iter().filter(|x| **x > 0.0).count() as f64 / n as f64
        },
    }
}

/// Trains the demand network on every year and reports each car's own
/// elasticity for a `delta` price increase. With BLP instruments the
/// first-stage residual is appended to the inputs and held fixed.
pub fn run_empirical(data: &AutoData, cfg: &EmpiricalConfig, seed: u64) -> Result<EmpiricalResult> {
    if !(cfg.delta > 0.0 && cfg.delta.is_finite()) {
        return Err(Error::Config(format!("delta {} must be positive", cfg.delta)));
    }
    let (markets, first_stage) = match cfg.iv {
        IvMode::None => (data.markets.clone(), None),
        IvMode::Blp => {
            let mut with_z = data.clone();
            build_blp_instruments(&mut with_z)?;
            let fit = fit_first_stage(&with_z.markets, &cfg.first_stage)?;
            log::info!("first stage R² = {:.3}", fit.r_squared);
            (augment_with_residuals(&with_z.markets, &fit)?, Some(fit))
        }
    };
    let k_in = markets[0].num_features();
    let mut model = DeepSetModel::new(k_in, cfg.deepset.arch.clone(), &mut RngStream::new(seed, 0x656d))?;
    let tc = deepchoice::deepset::TrainConfig {
        seed,
        ..cfg.deepset.train.clone()
    };
    let report = train(&mut model, &markets, &tc)?;
    log::info!("demand fit: train MSE {:.3e}", report.final_mse);

    let shift = PriceShift::Abs(cfg.delta);
    let mut rows = Vec::new();
    for (recs, m) in data.years.iter().zip(&markets) {
        let e = elasticity_matrix(&model, m, shift)?;
        for (j, r) in recs.iter().enumerate() {
            let own = e.get(j, j).ok_or_else(|| Error::UndefinedElasticity {
                j,
                k: j,
                reason: format!("year {} model {}", r.year, r.model),
            })?;
            rows.push(ElasticityRow {
                year: r.year,
                firm_id: r.firm_id,
                model: r.model.clone(),
                price: r.price,
                share: r.share,
                category: PriceCategory::of(r.price),
                own_elasticity: own,
            });
        }
    }
    let summary = [PriceCategory::High, PriceCategory::Medium, PriceCategory::Low]
        .into_iter()
        .map(|c| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.category == c)
                .map(|r| r.own_elasticity)
                .collect();
            summarize(c, &v)
        })
        .collect();
    Ok(EmpiricalResult {
        rows,
        summary,
        first_stage,
    })
}
