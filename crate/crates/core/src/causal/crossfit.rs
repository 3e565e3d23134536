//! Debiased cross-fit estimate of the average effect of a price change on
//! demand, with a variance from the per-row influence values.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::riesz::{fit_riesz, RieszConfig, RieszModel};
use crate::deepset::{train, DeepSetModel};
use crate::elastic::{DeepSetSpec, PriceShift};
use crate::error::{Error, Result};
use crate::market::Market;
use crate::nn::{stream_id, RngStream};
use crate::predictor::SharePredictor;

/// `π̂_j(p_j shifted) − π̂_j(p_j)` with every competitor unchanged.
pub fn moment_price_change(
    predictor: &dyn SharePredictor,
    market: &Market,
    j: usize,
    shift: PriceShift,
) -> Result<f64> {
    if j >= market.num_products() {
        return Err(Error::shape("moment product index", market.num_products(), j));
    }
    let base = predictor.predict_market(market)?;
    let moved = predictor.predict_market(&market.with_price(j, shift.apply(market.price(j))))?;
    Ok(moved[j] - base[j])
}

/// The moment for every product of a market.
pub fn market_moments(predictor: &dyn SharePredictor, market: &Market, shift: PriceShift) -> Result<Vec<f64>> {
    let base = predictor.predict_market(market)?;
    (0..market.num_products())
        .map(|j| {
            let moved = predictor.predict_market(&market.with_price(j, shift.apply(market.price(j))))?;
            Ok(moved[j] - base[j])
        })
        .collect()
}

/// Market-level partition into `L` folds. Each entry lists market indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// Shuffles `n_markets` indices and deals them into `l` folds.
    pub fn random(n_markets: usize, l: usize, rng: &mut RngStream) -> Result<FoldPlan> {
        if l < 2 {
            return Err(Error::Plan(format!("cross-fitting needs at least 2 folds; got {l}")));
        }
        if n_markets < l {
            return Err(Error::Plan(format!("{l} folds need at least {l} markets; got {n_markets}")));
        }
        let mut idx: Vec<usize> = (0..n_markets).collect();
        idx.shuffle(rng);
        let mut folds = vec![Vec::new(); l];
        for (pos, i) in idx.into_iter().enumerate() {
            folds[pos % l].push(i);
        }
        for f in &mut folds {
            f.sort_unstable();
        }
        Ok(FoldPlan { folds })
    }

    /// Checks that folds are non-empty, disjoint and cover `0..n_markets`.
    pub fn validate(&self, n_markets: usize) -> Result<()> {
        if self.folds.len() < 2 {
            return Err(Error::Plan("cross-fitting needs at least 2 folds".into()));
        }
        let mut seen = vec![false; n_markets];
        for (l, f) in self.folds.iter().enumerate() {
            if f.is_empty() {
                return Err(Error::Plan(format!("fold {l} has no held-out markets")));
            }
            for &i in f {
                if i >= n_markets {
                    return Err(Error::Plan(format!("fold {l} refers to market index {i} of {n_markets}")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Plan(format!("market index {i} appears in two folds")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Plan(format!("market index {i} is in no fold")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub theta: f64,
    #[serde(rename = "V")]
    pub v: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    #[serde(rename = "L")]
    pub l: usize,
    pub n: usize,
    /// Mean of the moment alone, without the correction term.
    pub plug_in: f64,
    /// Influence values, one per product row in dataset order.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub psi: Vec<f64>,
}

/// Nuisance estimates trained on one fold's complement. A missing Riesz
/// model means `α ≡ 0`.
pub struct Nuisance {
    pub demand: Box<dyn SharePredictor>,
    pub riesz: Option<RieszModel>,
}

/// Cross-fitting with caller-supplied nuisance training. `fit(train, seed)`
/// receives the complement of each fold and a seed derived from the
/// held-out market ids, so results do not depend on fold order.
pub fn crossfit_with(
    markets: &[Market],
    plan: &FoldPlan,
    shift: PriceShift,
    seed: u64,
    fit: &(dyn Fn(&[Market], u64) -> Result<Nuisance> + Sync),
) -> Result<InferenceResult> {
    shift.validate()?;
    plan.validate(markets.len())?;
    let per_fold: Vec<Vec<(usize, Vec<f64>, Vec<f64>)>> = plan
        .folds
        .par_iter()
        .map(|held| {
            let mut in_fold = vec![false; markets.len()];
            for &i in held {
                in_fold[i] = true;
            }
            let train_set: Vec<Market> = markets
                .iter()
                .zip(&in_fold)
                .filter(|(_, &f)| !f)
                .map(|(m, _)| m.clone())
                .collect();
            let mut key = vec![seed];
            key.extend(held.iter().map(|&i| markets[i].id));
            let nuisance = fit(&train_set, stream_id(&key))?;
            held.iter()
                .map(|&i| {
                    let m = &markets[i];
                    let moments = market_moments(nuisance.demand.as_ref(), m, shift)?;
                    let correction = match &nuisance.riesz {
                        Some(r) => {
                            let alpha = r.alpha(m)?;
                            let pred = nuisance.demand.predict_market(m)?;
                            alpha
                                .iter()
                                .zip(pred.iter().zip(&m.shares))
                                .map(|(a, (p, y))| a * (y - p))
                                .collect()
                        }
                        None => vec![0.0; m.num_products()],
                    };
                    Ok((i, moments, correction))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    // Assemble in dataset order.
    let mut slots: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; markets.len()];
    for (i, mo, co) in per_fold.into_iter().flatten() {
        slots[i] = Some((mo, co));
    }
    let mut moments = Vec::new();
    let mut scores = Vec::new();
    for (mo, co) in slots.into_iter().flatten() {
        for (a, b) in mo.iter().zip(&co) {
            moments.push(*a);
            scores.push(a + b);
        }
    }
    let n = scores.len();
    if n == 0 {
        return Err(Error::Plan("no held-out rows".into()));
    }
    let theta = scores.iter().sum::<f64>() / n as f64;
    let psi: Vec<f64> = scores.iter().map(|s| s - theta).collect();
    let v = psi.iter().map(|p| p * p).sum::<f64>() / n as f64;
    let se = (v / n as f64).sqrt();
    if !(theta.is_finite() && se.is_finite()) {
        return Err(Error::NonFinite("cross-fit estimate".into()));
    }
    Ok(InferenceResult {
        theta,
        v,
        se,
        ci_lo: theta - 1.96 * se,
        ci_hi: theta + 1.96 * se,
        l: plan.folds.len(),
        n,
        plug_in: moments.iter().sum::<f64>() / n as f64,
        psi,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossfitConfig {
    pub folds: usize,
    pub shift: PriceShift,
    pub demand: DeepSetSpec,
    pub riesz: RieszConfig,
    /// When false the correction term is dropped (plug-in estimate).
    pub debias: bool,
    pub seed: u64,
}

impl Default for CrossfitConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            shift: PriceShift::Pct(0.01),
            demand: DeepSetSpec::default(),
            riesz: RieszConfig::default(),
            debias: true,
            seed: 0,
        }
    }
}

/// Trains the deep-set demand model and the Riesz model on one fold's
/// complement.
pub fn fit_nuisance(train_set: &[Market], cfg: &CrossfitConfig, seed: u64) -> Result<Nuisance> {
    let k_in = train_set
        .first()
        .ok_or_else(|| Error::Plan("fold complement has no markets".into()))?
        .num_features();
    let mut model = DeepSetModel::new(k_in, cfg.demand.arch.clone(), &mut RngStream::new(seed, 0x6465))?;
    train(
        &mut model,
        train_set,
        &crate::deepset::TrainConfig {
            seed,
            ..cfg.demand.train.clone()
        },
    )?;
    let riesz = if cfg.debias {
        Some(fit_riesz(
            train_set,
            cfg.shift,
            &RieszConfig {
                seed,
                ..cfg.riesz.clone()
            },
        )?)
    } else {
        None
    };
    Ok(Nuisance {
        demand: Box::new(model),
        riesz,
    })
}

/// Random market-level folds, then [`crossfit_with`] using deep-set demand
/// and Riesz nuisances.
pub fn crossfit_debiased(markets: &[Market], cfg: &CrossfitConfig) -> Result<InferenceResult> {
    let plan = FoldPlan::random(
        markets.len(),
        cfg.folds,
        &mut RngStream::new(cfg.seed, stream_id(&[0x666f_6c64])),
    )?;
    crossfit_with(markets, &plan, cfg.shift, cfg.seed, &|train_set, seed| {
        fit_nuisance(train_set, cfg, seed)
    })
}
