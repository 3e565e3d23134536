//! Replicated estimator comparisons on simulated markets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{elasticity_matrix, mae_rmse, PriceShift};
use crate::baselines::{fit_mean, fit_mnl, fit_rcl, fit_stacked_np, RclConfig, StackedGrid};
use crate::deepset::{train, DeepSetModel, SetArch, TrainConfig};
use crate::error::{Error, Result};
use crate::market::Market;
use crate::nn::{stream_id, RngStream};
use crate::predictor::SharePredictor;
use crate::sim::{add_new_product, simulate, split, SimConfig, TruthModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[serde(rename = "deepset", alias = "deep_set")]
    DeepSet,
    Mnl,
    Rcl,
    StackedNp,
    Mean,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::DeepSet => "deepset",
            Estimator::Mnl => "mnl",
            Estimator::Rcl => "rcl",
            Estimator::StackedNp => "stacked_np",
            Estimator::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "deepset" | "deep_set" => Estimator::DeepSet,
            "mnl" => Estimator::Mnl,
            "rcl" => Estimator::Rcl,
            "stacked_np" | "np" => Estimator::StackedNp,
            "mean" => Estimator::Mean,
            other => return Err(Error::Config(format!("unknown estimator '{other}'"))),
        })
    }
}

/// Architecture and optimizer settings of the demand network.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepSetSpec {
    pub arch: SetArch,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub sim: SimConfig,
    pub reps: usize,
    /// Fraction of markets used for fitting.
    pub train_ratio: f64,
    pub estimators: Vec<Estimator>,
    pub deepset: DeepSetSpec,
    pub rcl: RclConfig,
    pub stacked: StackedGrid,
    /// Relative price change for elasticities.
    pub elasticity_pct: f64,
    /// Also score predictions on test markets with one added product.
    pub new_product: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            reps: 20,
            train_ratio: 0.8,
            estimators: vec![Estimator::DeepSet, Estimator::Mnl, Estimator::Rcl, Estimator::Mean],
            deepset: DeepSetSpec::default(),
            rcl: RclConfig::default(),
            stacked: StackedGrid::default(),
            elasticity_pct: 0.01,
            new_product: false,
        }
    }
}

/// One estimator's pooled errors over every replication. A failed estimator
/// keeps its row with `n_obs = 0` and NaN errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dgp: String,
    #[serde(rename = "J")]
    pub j: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub estimator: String,
    #[serde(rename = "MAE")]
    pub mae: f64,
    #[serde(rename = "RMSE")]
    pub rmse: f64,
    pub n_obs: usize,
}

/// Share, own-elasticity and cross-elasticity errors, plus new-product
/// share errors when requested.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTables {
    pub share: Vec<MetricRow>,
    pub own_elasticity: Vec<MetricRow>,
    pub cross_elasticity: Vec<MetricRow>,
    pub new_product: Vec<MetricRow>,
}

impl BenchmarkTables {
    /// `(table name, rows)` pairs in output order.
    pub fn tables(&self) -> Vec<(&'static str, &[MetricRow])> {
        let mut out = vec![
            ("share", self.share.as_slice()),
            ("own_elasticity", self.own_elasticity.as_slice()),
            ("cross_elasticity", self.cross_elasticity.as_slice()),
        ];
        if !self.new_product.is_empty() {
            out.push(("new_product", self.new_product.as_slice()));
        }
        out
    }

    pub fn find(rows: &[MetricRow], estimator: Estimator) -> Option<&MetricRow> {
        rows.iter().find(|r| r.estimator == estimator.name())
    }
}

/// Fits one estimator on `train`.
pub fn fit_estimator(
    est: Estimator,
    train_markets: &[Market],
    cfg: &BenchmarkConfig,
    seed: u64,
) -> Result<Box<dyn SharePredictor>> {
    Ok(match est {
        Estimator::DeepSet => {
            let k_in = train_markets
                .first()
                .ok_or_else(|| Error::Config("no training markets".into()))?
                .num_features();
            let mut rng = RngStream::new(seed, stream_id(&[0x6473]));
            let mut model = DeepSetModel::new(k_in, cfg.deepset.arch.clone(), &mut rng)?;
            let tc = TrainConfig {
                seed,
                ..cfg.deepset.train.clone()
            };
            train(&mut model, train_markets, &tc)?;
            Box::new(model)
        }
        Estimator::Mnl => Box::new(fit_mnl(train_markets)?),
        Estimator::Rcl => Box::new(fit_rcl(train_markets, &RclConfig { seed, ..cfg.rcl.clone() })?),
        Estimator::StackedNp => Box::new(fit_stacked_np(
            train_markets,
            &StackedGrid {
                seed,
                ..cfg.stacked.clone()
            },
        )?),
        Estimator::Mean => Box::new(fit_mean(train_markets)?),
    })
}

#[derive(Default)]
struct Errors {
    share: (Vec<f64>, Vec<f64>),
    own: (Vec<f64>, Vec<f64>),
    cross: (Vec<f64>, Vec<f64>),
    new_product: (Vec<f64>, Vec<f64>),
    failed: bool,
}

fn push_defined(dst: &mut (Vec<f64>, Vec<f64>), pred: &[Option<f64>], truth: &[Option<f64>]) {
    for (p, t) in pred.iter().zip(truth) {
        if let (Some(p), Some(t)) = (p, t) {
            dst.0.push(*p);
            dst.1.push(*t);
        }
    }
}

struct TestSet {
    markets: Vec<Market>,
    own: Vec<Vec<Option<f64>>>,
    cross: Vec<Vec<Option<f64>>>,
    augmented: Vec<(Market, Vec<f64>)>,
}

fn prepare_test(markets: Vec<Market>, truth: &TruthModel, cfg: &BenchmarkConfig, seed: u64) -> Result<TestSet> {
    let shift = PriceShift::Pct(cfg.elasticity_pct);
    let mut own = Vec::new();
    let mut cross = Vec::new();
    for m in &markets {
        let e = elasticity_matrix(truth, m, shift)?;
        own.push(e.own());
        cross.push(e.cross());
    }
    let augmented = if cfg.new_product {
        markets
            .iter()
            .map(|m| {
                let mut rng = RngStream::new(seed, stream_id(&[0x6e65_77, m.id]));
                add_new_product(m, truth, &mut rng)
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(TestSet {
        markets,
        own,
        cross,
        augmented,
    })
}

fn score(pred: &dyn SharePredictor, test: &TestSet, cfg: &BenchmarkConfig) -> Result<Errors> {
    let shift = PriceShift::Pct(cfg.elasticity_pct);
    let mut out = Errors::default();
    for (i, m) in test.markets.iter().enumerate() {
        let p = pred.predict_market(m)?;
        out.share.0.extend(&p);
        out.share.1.extend(&m.shares);
        let e = elasticity_matrix(pred, m, shift)?;
        push_defined(&mut out.own, &e.own(), &test.own[i]);
        push_defined(&mut out.cross, &e.cross(), &test.cross[i]);
    }
    Ok(out)
}

fn score_new_product(pred: &dyn SharePredictor, test: &TestSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut out = (Vec::new(), Vec::new());
    for (m, truth) in &test.augmented {
        out.0.extend(pred.predict_market(m)?);
        out.1.extend(truth);
    }
    Ok(out)
}

fn run_rep(cfg: &BenchmarkConfig, rep: usize) -> Result<Vec<(Estimator, Errors)>> {
    let seed = cfg.sim.seed.wrapping_add(rep as u64);
    let sim = SimConfig {
        seed,
        ..cfg.sim.clone()
    };
    let data = simulate(&sim)?;
    let truth = data
        .truth
        .clone()
        .ok_or_else(|| Error::Config("simulated data lacks a truth model".into()))?;
    let mut rng = RngStream::new(seed, stream_id(&[0x7370_6c69]));
    let (train_set, test_set) = split(&data, cfg.train_ratio, &mut rng)?;
    let test = prepare_test(test_set.markets, &truth, cfg, seed)?;

    let mut out = Vec::new();
    for &est in &cfg.estimators {
        let result = fit_estimator(est, &train_set.markets, cfg, seed).and_then(|pred| {
            let mut errs = score(pred.as_ref(), &test, cfg)?;
            if cfg.new_product {
                match score_new_product(pred.as_ref(), &test) {
                    Ok(e) => errs.new_product = e,
                    Err(e) => {
                        log::warn!("{} cannot score new-product markets: {e}", est.name());
                        errs.failed = true;
                    }
                }
            }
            Ok(errs)
        });
        match result {
            Ok(e) => out.push((est, e)),
            Err(e) => {
                log::warn!("replication {rep}: {} failed: {e}", est.name());
                out.push((
                    est,
                    Errors {
                        failed: true,
                        ..Errors::default()
                    },
                ));
            }
        }
    }
    Ok(out)
}

/// Runs `reps` independent replications (parallel), each generating data,
/// splitting by market, fitting every estimator and scoring it on the test
/// markets. Errors are pooled over replications per estimator.
pub fn benchmark_run(cfg: &BenchmarkConfig) -> Result<BenchmarkTables> {
    cfg.sim.validate()?;
    if cfg.reps == 0 || cfg.estimators.is_empty() {
        return Err(Error::Config("benchmark needs at least one replication and estimator".into()));
    }
    if !(cfg.elasticity_pct > 0.0) {
        return Err(Error::Config("elasticity_pct must be positive".into()));
    }
    let reps: Vec<Vec<(Estimator, Errors)>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| run_rep(cfg, r))
        .collect::<Result<_>>()?;

    let mut tables = BenchmarkTables::default();
    for (i, &est) in cfg.estimators.iter().enumerate() {
        let mut pooled = Errors::default();
        let mut any_ok = false;
        let mut np_failed = false;
        for rep in &reps {
            let e = &rep[i].1;
            if e.failed && e.share.0.is_empty() {
                continue;
            }
            any_ok = true;
            np_failed |= e.failed;
            for (dst, src) in [
                (&mut pooled.share, &e.share),
                (&mut pooled.own, &e.own),
                (&mut pooled.cross, &e.cross),
                (&mut pooled.new_product, &e.new_product),
            ] {
                dst.0.extend(&src.0);
                dst.1.extend(&src.1);
            }
        }
        let row = |errs: &(Vec<f64>, Vec<f64>), ok: bool| {
            let (mae, rmse) = if ok {
                mae_rmse(&errs.0, &errs.1).unwrap_or((f64::NAN, f64::NAN))
            } else {
                (f64::NAN, f64::NAN)
            };
            MetricRow {
                dgp: cfg.sim.dgp.name().into(),
                j: cfg.sim.j,
                m: cfg.sim.m,
                k: cfg.sim.k,
                estimator: est.name().into(),
                mae,
                rmse,
                n_obs: if ok { errs.0.len() } else { 0 },
            }
        };
        tables.share.push(row(&pooled.share, any_ok));
        tables.own_elasticity.push(row(&pooled.own, any_ok));
        tables.cross_elasticity.push(row(&pooled.cross, any_ok));
        if cfg.new_product {
            tables
                .new_product
                .push(row(&pooled.new_product, any_ok && !np_failed));
        }
    }
    Ok(tables)
}

/// One point of an elasticity-versus-price curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub estimator: String,
    pub price: f64,
    pub own_elasticity: Option<f64>,
}

/// Own elasticity of product `j` as its price sweeps over `prices`, with
/// every other product held fixed.
pub fn elasticity_curve(
    predictors: &[&dyn SharePredictor],
    market: &Market,
    j: usize,
    prices: &[f64],
    shift: PriceShift,
) -> Result<Vec<CurvePoint>> {
    if j >= market.num_products() {
        return Err(Error::shape("curve product index", market.num_products(), j));
    }
    let mut out = Vec::with_capacity(predictors.len() * prices.len());
    for pred in predictors {
        for &p in prices {
            let m = market.with_price(j, p);
            let e = elasticity_matrix(*pred, &m, shift)?;
            out.push(CurvePoint {
                estimator: pred.label(),
                price: p,
                own_elasticity: e.get(j, j),
            });
        }
    }
    Ok(out)
}
