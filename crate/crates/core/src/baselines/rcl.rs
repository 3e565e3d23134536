//! Random-coefficients logit fitted by simulated share matching.
//!
//! Each coefficient is normal with its own mean and standard deviation. The
//! fit minimizes the mean squared difference between observed shares and
//! shares averaged over `R` frozen standard-normal draws, using Adam on
//! (means, log-SDs) with analytic gradients.

use rand_distr::StandardNormal;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mnl::fit_mnl;
use crate::error::{Error, Result};
use crate::market::Market;
use crate::nn::{Matrix, RngStream};
use crate::predictor::SharePredictor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RclConfig {
    /// Frozen simulation draws used for fitting and prediction.
    pub draws: usize,
    pub iterations: usize,
    pub lr: f64,
    /// Starting standard deviation of every coefficient.
    pub init_sd: f64,
    /// Pins every standard deviation at zero, which nests the plain logit.
    pub fix_sd_zero: bool,
    pub seed: u64,
}

impl Default for RclConfig {
    fn default() -> Self {
        Self {
            draws: 500,
            iterations: 300,
            lr: 0.05,
            init_sd: 0.5,
            fix_sd_zero: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RclFit {
    /// Coefficient means; index 0 is price.
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// `R × C` standard-normal draws, frozen at fit time.
    pub draws: Matrix,
    /// Share MSE on the training data at the returned parameters.
    pub objective: f64,
    pub iterations: usize,
    /// False when the objective was still improving at the last iteration.
    pub converged: bool,
    pub config: RclConfig,
}

impl RclFit {
    /// `R × C` coefficient draws `mean + sd·z`.
    fn coefficient_draws(mean: &[f64], sd: &[f64], z: &Matrix) -> Matrix {
        let mut b = z.clone();
        for r in 0..b.rows() {
            for (c, v) in b.row_mut(r).iter_mut().enumerate() {
                *v = mean[c] + sd[c] * *v;
            }
        }
        b
    }

    /// Share MSE over `markets` at this fit's parameters.
    pub fn objective_on(&self, markets: &[Market]) -> Result<f64> {
        let b = Self::coefficient_draws(&self.mean, &self.sd, &self.draws);
        let (loss, _) = loss_and_grad(&b, markets, None)?;
        Ok(loss)
    }
}

/// Per-draw logit probabilities (`J × R`) for utilities `X·Bᵀ`.
fn draw_probs(x: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut u = x.matmul_nt(b)?;
    let (j, r) = (u.rows(), u.cols());
    for d in 0..r {
        let mut top = 0.0f64;
        for i in 0..j {
            top = top.max(u.get(i, d));
        }
        let mut denom = (-top).exp();
        for i in 0..j {
            let e = (u.get(i, d) - top).exp();
            u.set(i, d, e);
            denom += e;
        }
        for i in 0..j {
            u.set(i, d, u.get(i, d) / denom);
        }
    }
    Ok(u)
}

fn mean_over_draws(p: &Matrix) -> Vec<f64> {
    let r = p.cols() as f64;
    (0..p.rows()).map(|i| p.row(i).iter().sum::<f64>() / r).collect()
}

/// Share MSE and, when `grad` is given, its gradient with respect to the
/// coefficient draws `B` (accumulated into `grad`).
fn loss_and_grad(b: &Matrix, markets: &[Market], mut grad: Option<&mut Matrix>) -> Result<(f64, usize)> {
    let n = crate::market::total_rows(markets);
    if n == 0 {
        return Err(Error::Config("RCL objective needs product rows".into()));
    }
    let r = b.rows() as f64;
    let mut loss = 0.0;
    for m in markets {
        if m.num_features() != b.cols() {
            return Err(Error::shape("RCL feature columns", b.cols(), m.num_features()));
        }
        let p = draw_probs(&m.features, b)?;
        let s_hat = mean_over_draws(&p);
        let g: Vec<f64> = s_hat
            .iter()
            .zip(&m.shares)
            .map(|(a, y)| {
                loss += (a - y).powi(2);
                2.0 * (a - y) / n as f64
            })
            .collect();
        if let Some(grad) = grad.as_deref_mut() {
            // dL/du_kd = (1/R)·p_kd·(g_k − Σ_j g_j p_jd)
            let mut du = p.clone();
            for d in 0..p.cols() {
                let inner: f64 = (0..p.rows()).map(|j| g[j] * p.get(j, d)).sum();
                for k in 0..p.rows() {
                    du.set(k, d, p.get(k, d) * (g[k] - inner) / r);
                }
            }
            let db = du.matmul_tn(&m.features)?;
            for (a, v) in grad.data_mut().iter_mut().zip(db.data()) {
                *a += v;
            }
        }
    }
    Ok((loss / n as f64, n))
}

pub fn fit_rcl(train: &[Market], cfg: &RclConfig) -> Result<RclFit> {
    if cfg.draws < 100 {
        return Err(Error::Config(format!("RCL fit needs at least 100 draws; got {}", cfg.draws)));
    }
    if cfg.iterations == 0 || !(cfg.lr > 0.0) || !(cfg.init_sd > 0.0) {
        return Err(Error::Config("RCL iterations, lr and init_sd must be positive".into()));
    }
    let first = train
        .first()
        .ok_or_else(|| Error::Config("RCL fit needs at least one market".into()))?;
    let c = first.num_features();
    let mut rng = RngStream::new(cfg.seed, 0x72_636c);
    let z_data = (0..cfg.draws * c).map(|_| rng.sample(StandardNormal)).collect();
    let z = Matrix::from_vec(cfg.draws, c, z_data)?;

    let mut mean = fit_mnl(train)?.coefficients();
    let fixed = cfg.fix_sd_zero;
    let mut log_sd = vec![cfg.init_sd.ln(); c];
    let sd_of = |ls: &[f64]| -> Vec<f64> {
        if fixed {
            vec![0.0; c]
        } else {
            ls.iter().map(|v| v.exp()).collect()
        }
    };

    let dim = 2 * c;
    let (mut m1, mut m2) = (vec![0.0; dim], vec![0.0; dim]);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut best = (f64::INFINITY, mean.clone(), log_sd.clone());
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let sd = sd_of(&log_sd);
        let b = RclFit::coefficient_draws(&mean, &sd, &z);
        let mut gb = Matrix::zeros(b.rows(), b.cols());
        let (loss, _) = loss_and_grad(&b, train, Some(&mut gb))?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch: it, loss });
        }
        trace.push(loss);
        if loss < best.0 {
            best = (loss, mean.clone(), log_sd.clone());
        }
        let mut g = vec![0.0; dim];
        for rr in 0..gb.rows() {
            for cc in 0..c {
                let v = gb.get(rr, cc);
                g[cc] += v;
                if !fixed {
                    g[c + cc] += v * sd[cc] * z.get(rr, cc);
                }
            }
        }
        let t = (it + 1) as i32;
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        for i in 0..dim {
            m1[i] = b1 * m1[i] + (1.0 - b1) * g[i];
            m2[i] = b2 * m2[i] + (1.0 - b2) * g[i] * g[i];
            let step = cfg.lr * (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
            if i < c {
                mean[i] -= step;
            } else {
                log_sd[i - c] -= step;
            }
        }
    }

    let (_, mean, log_sd) = best;
    let sd = sd_of(&log_sd);
    let b = RclFit::coefficient_draws(&mean, &sd, &z);
    let (objective, _) = loss_and_grad(&b, train, None)?;
    let window = trace.len().min(50);
    let recent = trace[trace.len() - window];
    let converged = (recent - objective) <= 1e-3 * objective.max(1e-12);
    if !converged {
        log::warn!(
            "RCL fit still improving after {} iterations (objective {objective:.3e}); returning best iterate",
            cfg.iterations
        );
    }
    Ok(RclFit {
        mean,
        sd,
        draws: z,
        objective,
        iterations: cfg.iterations,
        converged,
        config: cfg.clone(),
    })
}

impl SharePredictor for RclFit {
    fn label(&self) -> String {
        "rcl".into()
    }

    fn predict_market(&self, market: &Market) -> Result<Vec<f64>> {
        if market.num_features() != self.mean.len() {
            return Err(Error::shape("RCL feature columns", self.mean.len(), market.num_features()));
        }
        let b = Self::coefficient_draws(&self.mean, &self.sd, &self.draws);
        Ok(mean_over_draws(&draw_probs(&market.features, &b)?))
    }
}

#[cfg(test)]
pub(super) fn loss_for_test(b: &Matrix, markets: &[Market], grad: Option<&mut Matrix>) -> f64 {
    loss_and_grad(b, markets, grad).unwrap().0
}
