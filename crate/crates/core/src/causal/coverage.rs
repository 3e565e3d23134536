//! Repeated simulations measuring how often the cross-fit interval covers
//! the population effect of a price change.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::crossfit::{crossfit_debiased, CrossfitConfig};
use crate::deepset::{SetArch, TrainConfig};
use crate::elastic::{DeepSetSpec, PriceShift};
use crate::error::{Error, Result};
use crate::market::PRICE_COL;
use crate::nn::{stream_id, RngStream};
use crate::sim::{gen_features, simulate_with_truth, CoefDist, SimConfig, TruthModel};

/// The default demand network is narrower than the benchmark one and trains
/// for 300 full-batch epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageConfig {
    pub sim: SimConfig,
    pub sims: usize,
    pub crossfit: CrossfitConfig,
    /// Coefficient draws of the frozen truth for random-coefficient designs.
    pub truth_draws: usize,
    /// Markets averaged to compute the population effect.
    pub theta0_markets: usize,
    pub seed: u64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::preset("coverage").expect("built-in preset"),
            sims: 50,
            crossfit: CrossfitConfig {
                demand: DeepSetSpec {
                    arch: SetArch {
                        phi_hidden: vec![32, 32],
                        embed_dim: 16,
                        rho_hidden: vec![32, 32],
                    },
                    train: TrainConfig {
                        epochs: 300,
                        ..TrainConfig::default()
                    },
                },
                ..CrossfitConfig::default()
            },
            truth_draws: 100_000,
            theta0_markets: 2000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub sim: usize,
    pub theta: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub covered: bool,
    pub plug_in: f64,
    pub theta0: f64,
    /// Empty on success.
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub theta0: f64,
    pub coverage: f64,
    pub mean_bias: f64,
    pub plug_in_coverage: f64,
    pub plug_in_mean_bias: f64,
    /// Sample skewness of `(θ̂ − θ₀)/se` over successful sims.
    pub skew_debiased: f64,
    /// Same, for the plug-in estimate scaled by the debiased `se`.
    pub skew_plug_in: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub rows: Vec<CoverageRow>,
}

/// The truth shared by every simulation: fixed coefficients for MNL, a
/// single large frozen draw set otherwise.
pub fn coverage_truth(cfg: &CoverageConfig) -> Result<TruthModel> {
    let mut rng = RngStream::new(cfg.seed, stream_id(&[0x7468_6574]));
    let dist = CoefDist::for_preset(cfg.sim.coef, cfg.sim.dgp, cfg.sim.k, &mut rng);
    let draws = if cfg.sim.dgp.is_mnl() { 1 } else { cfg.truth_draws };
    TruthModel::sample(cfg.sim.dgp, &dist, draws, &mut rng)
}

/// `E[m(w, π₀)]` by Monte Carlo over fresh markets from the design.
pub fn population_effect(truth: &TruthModel, sim: &SimConfig, shift: PriceShift, n_markets: usize, seed: u64) -> Result<f64> {
    let cfg = SimConfig {
        m: n_markets,
        seed: stream_id(&[seed, 0x7468_6530]),
        ..sim.clone()
    };
    let features = gen_features(&cfg)?;
    let sums: Vec<(f64, usize)> = features
        .into_par_iter()
        .map(|f| {
            let moved: Vec<f64> = f.column(PRICE_COL).iter().map(|&p| shift.apply(p)).collect();
            let mo = truth.own_price_effects(&f, &moved)?;
            Ok((mo.iter().sum::<f64>(), f.rows()))
        })
        .collect::<Result<_>>()?;
    let (s, n) = sums.iter().fold((0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(s / n as f64)
}

fn skewness(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 3 {
        return f64::NAN;
    }
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

pub fn coverage_experiment(cfg: &CoverageConfig) -> Result<CoverageReport> {
    cfg.sim.validate()?;
    if cfg.sims == 0 {
        return Err(Error::Config("coverage needs at least one simulation".into()));
    }
    let truth = coverage_truth(cfg)?;
    let theta0 = population_effect(&truth, &cfg.sim, cfg.crossfit.shift, cfg.theta0_markets, cfg.seed)?;
    let rows: Vec<CoverageRow> = (0..cfg.sims)
        .into_par_iter()
        .map(|s| {
            let seed = stream_id(&[cfg.seed, s as u64]);
            let sim = SimConfig {
                seed,
                ..cfg.sim.clone()
            };
            let run = simulate_with_truth(&sim, truth.clone()).and_then(|data| {
                crossfit_debiased(
                    &data.markets,
                    &CrossfitConfig {
                        seed,
                        ..cfg.crossfit.clone()
                    },
                )
            });
            match run {
                Ok(r) => CoverageRow {
                    sim: s,
                    theta: r.theta,
                    se: r.se,
                    ci_lo: r.ci_lo,
                    ci_hi: r.ci_hi,
                    covered: r.ci_lo <= theta0 && theta0 <= r.ci_hi,
                    plug_in: r.plug_in,
                    theta0,
                    error: String::new(),
                },
                Err(e) => {
                    log::warn!("coverage simulation {s} failed and is excluded: {e}");
                    CoverageRow {
                        sim: s,
                        theta: f64::NAN,
                        se: f64::NAN,
                        ci_lo: f64::NAN,
                        ci_hi: f64::NAN,
                        covered: false,
                        plug_in: f64::NAN,
                        theta0,
                        error: e.to_string(),
                    }
                }
            }
        })
        .collect();
    let ok: Vec<&CoverageRow> = rows.iter().filter(|r| r.error.is_empty()).collect();
    if ok.is_empty() {
        return Err(Error::NonFinite("every coverage simulation failed".into()));
    }
    let n = ok.len() as f64;
    let z: Vec<f64> = ok.iter().map(|r| (r.theta - theta0) / r.se).collect();
    let z_plug: Vec<f64> = ok.iter().map(|r| (r.plug_in - theta0) / r.se).collect();
    Ok(CoverageReport {
        theta0,
        coverage: ok.iter().filter(|r| r.covered).count() as f64 / n,
        mean_bias: ok.iter().map(|r| r.theta - theta0).sum::<f64>() / n,
        plug_in_coverage: ok
            .iter()
            .filter(|r| (r.plug_in - theta0).abs() <= 1.96 * r.se)
            .count() as f64
            / n,
        plug_in_mean_bias: ok.iter().map(|r| r.plug_in - theta0).sum::<f64>() / n,
        skew_debiased: skewness(&z),
        skew_plug_in: skewness(&z_plug),
        n_ok: ok.len(),
        n_failed: rows.len() - ok.len(),
        rows,
    })
}
