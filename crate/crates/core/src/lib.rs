//! Permutation-invariant neural demand estimation.
//!
//! Shares are modelled as `ρ(φ₁(own features) + Σ φ₂(competitor features))`,
//! trained on aggregate market shares. Around the estimator the crate ships
//! the simulation designs used to benchmark it, parametric and
//! non-parametric comparators, elasticity tooling, a control-function
//! correction for endogenous prices, and cross-fitted debiased inference for
//! the average effect of a price change.

pub mod baselines;
pub mod causal;
pub mod deepset;
pub mod elastic;
pub mod error;
pub mod market;
pub mod nn;
pub mod predictor;
pub mod sim;
pub mod util;

pub use error::{Error, Result};
pub use market::{Market, PRICE_COL};
pub use predictor::{FnPredictor, SharePredictor};
