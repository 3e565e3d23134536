//! Price endogeneity and inference on the average effect of a price change.
//!
//! A first-stage regression of price on instruments yields a residual that
//! enters the demand model as an extra input. The effect of a price change
//! is estimated by cross-fitting: demand and Riesz-representer nuisances are
//! trained off-fold and the debiased score is averaged on the held-out fold.

mod coverage;
mod crossfit;
mod first_stage;
mod riesz;

pub use coverage::{coverage_experiment, coverage_truth, population_effect, CoverageConfig, CoverageReport, CoverageRow};
pub use crossfit::{
    crossfit_debiased, crossfit_with, fit_nuisance, market_moments, moment_price_change, CrossfitConfig, FoldPlan,
    InferenceResult, Nuisance,
};
pub use first_stage::{augment_with_residuals, first_stage_design, fit_first_stage, FirstStageFit, FirstStageSpec};
pub use riesz::{fit_riesz, riesz_loss, RieszConfig, RieszModel};
