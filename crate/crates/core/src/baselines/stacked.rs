//! Fixed-width feed-forward benchmark: the features of all `J` products are
//! concatenated into one input vector and the network emits `J` shares.
//! Depth, width, learning rate and epochs are chosen by K-fold
//! cross-validation over markets.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Market;
use crate::nn::{adam_step, stream_id, AdamState, Matrix, MlpParams, OutputActivation, RngStream};
use crate::predictor::SharePredictor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackedHyper {
    pub hidden_layers: usize,
    pub nodes: usize,
    pub lr: f64,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackedGrid {
    pub hidden_layers: Vec<usize>,
    pub nodes: Vec<usize>,
    pub lr: Vec<f64>,
    pub epochs: Vec<usize>,
    pub folds: usize,
    pub batch_markets: usize,
    pub seed: u64,
}

impl Default for StackedGrid {
    fn default() -> Self {
        Self {
            hidden_layers: vec![3, 4, 5],
            nodes: vec![64, 128, 256],
            lr: vec![1e-2, 1e-3, 1e-4],
            epochs: vec![1, 2, 4],
            folds: 5,
            batch_markets: 4,
            seed: 0,
        }
    }
}

impl StackedGrid {
    pub fn cells(&self) -> Vec<StackedHyper> {
        let mut out = Vec::new();
        for &hidden_layers in &self.hidden_layers {
            for &nodes in &self.nodes {
                for &lr in &self.lr {
                    for &epochs in &self.epochs {
                        out.push(StackedHyper {
                            hidden_layers,
                            nodes,
                            lr,
                            epochs,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackedNpModel {
    pub j: usize,
    pub feature_cols: usize,
    pub net: MlpParams,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub hyper: StackedHyper,
    /// Mean validation MSE of the chosen cell.
    pub cv_mse: f64,
}

fn common_j(markets: &[Market]) -> Result<(usize, usize)> {
    let first = markets
        .first()
        .ok_or_else(|| Error::Config("stacked network needs at least one market".into()))?;
    let (j, c) = (first.num_products(), first.num_features());
    for m in markets {
        if m.num_products() != j {
            return Err(Error::Structural(format!(
                "stacked network input is tied to a fixed product count: market {} has J = {} but J = {j} was expected",
                m.id,
                m.num_products()
            )));
        }
        if m.num_features() != c {
            return Err(Error::shape(format!("market {} feature columns", m.id), c, m.num_features()));
        }
    }
    Ok((j, c))
}

fn stack(markets: &[&Market]) -> (Matrix, Matrix) {
    let j = markets[0].num_products();
    let width = markets[0].features.data().len();
    let mut x = Vec::with_capacity(markets.len() * width);
    let mut y = Vec::with_capacity(markets.len() * j);
    for m in markets {
        x.extend_from_slice(m.features.data());
        y.extend_from_slice(&m.shares);
    }
    (
        Matrix::from_vec(markets.len(), width, x).expect("stacked rows"),
        Matrix::from_vec(markets.len(), j, y).expect("stacked targets"),
    )
}

fn standardization(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    (0..x.cols())
        .map(|c| {
            let col = x.column(c);
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            (mean, if sd > 1e-12 { sd } else { 1.0 })
        })
        .unzip()
}

fn standardize(x: &Matrix, shift: &[f64], scale: &[f64]) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = (*v - shift[c]) / scale[c];
        }
    }
    out
}

/// Trains one cell; returns the model (without CV score).
fn train_cell(
    markets: &[&Market],
    hyper: &StackedHyper,
    batch_markets: usize,
    rng: &mut RngStream,
) -> Result<StackedNpModel> {
    let (x_raw, y) = stack(markets);
    let (shift, scale) = standardization(&x_raw);
    let x = standardize(&x_raw, &shift, &scale);
    let j = y.cols();
    let mut sizes = vec![x.cols()];
    sizes.extend(std::iter::repeat_n(hyper.nodes, hyper.hidden_layers));
    sizes.push(j);
    let mut net = MlpParams::init(&sizes, OutputActivation::Sigmoid, rng)?;
    let mut opt = AdamState::new(&net);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    for epoch in 0..hyper.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_markets.max(1)) {
            let xb = x.select_rows(chunk);
            let yb = y.select_rows(chunk);
            let (out, cache) = net.forward(&xb)?;
            let n = (chunk.len() * j) as f64;
            let mut g = out.clone();
            let mut loss = 0.0;
            for (gv, t) in g.data_mut().iter_mut().zip(yb.data()) {
                let e = *gv - t;
                loss += e * e;
                *gv = 2.0 * e / n;
            }
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            let grads = net.backward_params(&cache, &g)?;
            adam_step(&mut net, &grads, &mut opt, hyper.lr)?;
        }
    }
    Ok(StackedNpModel {
        j,
        feature_cols: markets[0].num_features(),
        net,
        input_shift: shift,
        input_scale: scale,
        hyper: hyper.clone(),
        cv_mse: f64::NAN,
    })
}

/// Grid search with market-level K-fold cross-validation, then a refit of
/// the best cell on all training markets.
pub fn fit_stacked_np(train: &[Market], grid: &StackedGrid) -> Result<StackedNpModel> {
    common_j(train)?;
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::Config("stacked network grid is empty".into()));
    }
    if grid.folds < 2 || train.len() < grid.folds {
        return Err(Error::Config(format!(
            "{} folds need at least that many markets (have {})",
            grid.folds,
            train.len()
        )));
    }
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut RngStream::new(grid.seed, stream_id(&[0x666f_6c64])));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; train.len()];
        for (pos, &i) in idx.iter().enumerate() {
            f[i] = pos % grid.folds;
        }
        f
    };

    let scores: Vec<f64> = cells
        .par_iter()
        .enumerate()
        .map(|(ci, hyper)| {
            let mut total = 0.0;
            for fold in 0..grid.folds {
                let fit_set: Vec<&Market> =
                    train.iter().zip(&fold_of).filter(|(_, &f)| f != fold).map(|(m, _)| m).collect();
                let val: Vec<&Market> =
                    train.iter().zip(&fold_of).filter(|(_, &f)| f == fold).map(|(m, _)| m).collect();
                let mut rng = RngStream::new(grid.seed, stream_id(&[ci as u64, fold as u64]));
                let mse = train_cell(&fit_set, hyper, grid.batch_markets, &mut rng)
                    .and_then(|model| {
                        let mut s = 0.0;
                        let mut n = 0usize;
                        for m in &val {
                            let p = model.predict_market(m)?;
                            s += p.iter().zip(&m.shares).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                            n += p.len();
                        }
                        Ok(s / n as f64)
                    })
                    .unwrap_or(f64::INFINITY);
                total += mse;
            }
            total / grid.folds as f64
        })
        .collect();

    let (best, &cv_mse) = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    if !cv_mse.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            loss: cv_mse,
        });
    }
    let all: Vec<&Market> = train.iter().collect();
    let mut rng = RngStream::new(grid.seed, stream_id(&[0x7265_6669_74]));
    let mut model = train_cell(&all, &cells[best], grid.batch_markets, &mut rng)?;
    model.cv_mse = cv_mse;
    Ok(model)
}

impl StackedNpModel {
    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }
}

impl SharePredictor for StackedNpModel {
    fn label(&self) -> String {
        "stacked_np".into()
    }

    fn predict_market(&self, market: &Market) -> Result<Vec<f64>> {
        if market.num_products() != self.j {
            return Err(Error::Structural(format!(
                "stacked network was fitted for J = {} products; market {} has {}",
                self.j,
                market.id,
                market.num_products()
            )));
        }
        if market.num_features() != self.feature_cols {
            return Err(Error::shape("stacked network feature columns", self.feature_cols, market.num_features()));
        }
        let x = Matrix::from_vec(1, market.features.data().len(), market.features.data().to_vec())?;
        let x = standardize(&x, &self.input_shift, &self.input_scale);
        Ok(self.net.predict(&x)?.into_vec())
    }
}
