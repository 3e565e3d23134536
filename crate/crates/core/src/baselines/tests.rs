use super::*;
use crate::nn::{Matrix, RngStream};
use crate::sim::{simulate, split, Dgp, SimConfig};
use rand::Rng;

fn analytic_market(id: u64, theta: &[f64], rng: &mut RngStream, j: usize) -> Market {
    let c = theta.len();
    let f = Matrix::from_vec(j, c, (0..j * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let u: Vec<f64> = (0..j)
        .map(|r| f.row(r).iter().zip(theta).map(|(a, b)| a * b).sum())
        .collect();
    Market::new(id, f, logit_shares(&u)).unwrap()
}

fn mae(p: &dyn SharePredictor, markets: &[Market]) -> f64 {
    let mut s = 0.0;
    let mut n = 0;
    for m in markets {
        for (a, b) in p.predict_market(m).unwrap().iter().zip(&m.shares) {
            s += (a - b).abs();
            n += 1;
        }
    }
    s / n as f64
}

#[test]
fn logit_shares_match_closed_form() {
    let s = logit_shares(&[0.0, 1.0]);
    let d = 1.0 + 1.0 + 1f64.exp();
    assert!((s[0] - 1.0 / d).abs() < 1e-15);
    assert!((s[1] - 1f64.exp() / d).abs() < 1e-15);
    // Large utilities stay finite.
    let s = logit_shares(&[800.0, 800.0]);
    assert!(s.iter().all(|v| (v - 0.5).abs() < 1e-12));
}

#[test]
fn mnl_recovers_noiseless_coefficients_exactly() {
    let theta = [-1.3, 0.7, -0.2, 1.1];
    let mut rng = RngStream::new(1, 0);
    let markets: Vec<Market> = (0..30).map(|i| analytic_market(i, &theta, &mut rng, 5)).collect();
    let fit = fit_mnl(&markets).unwrap();
    for (a, b) in fit.coefficients().iter().zip(&theta) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn mnl_recovers_simulated_coefficients() {
    let cfg = SimConfig {
        dgp: Dgp::Mnl,
        m: 200,
        k: 3,
        seed: 5,
        ..SimConfig::default()
    };
    let data = simulate(&cfg).unwrap();
    let fit = fit_mnl(&data.markets).unwrap();
    assert!((fit.alpha + 1.0).abs() < 0.05, "alpha {}", fit.alpha);
    for b in &fit.beta {
        assert!((b - 1.0).abs() < 0.05, "beta {b}");
    }
}

#[test]
fn mnl_predicts_held_out_mnl_data() {
    let cfg = SimConfig {
        dgp: Dgp::Mnl,
        seed: 9,
        ..SimConfig::default()
    };
    let data = simulate(&cfg).unwrap();
    let (train, test) = split(&data, 0.8, &mut RngStream::new(9, 1)).unwrap();
    let fit = fit_mnl(&train.markets).unwrap();
    let err = mae(&fit, &test.markets);
    assert!(err < 0.01, "MNL test MAE {err}");
}

#[test]
fn collinear_column_is_named() {
    let mut rng = RngStream::new(2, 0);
    let markets: Vec<Market> = (0..10)
        .map(|i| {
            let mut m = analytic_market(i, &[-1.0, 0.5, 0.5], &mut rng, 4);
            for r in 0..4 {
                let v = 2.0 * m.features.get(r, 1);
                m.features.set(r, 2, v);
            }
            m
        })
        .collect();
    match fit_mnl(&markets) {
        Err(Error::RankDeficient { column, name }) => {
            assert_eq!(column, 2);
            assert_eq!(name, "x2");
        }
        other => panic!("expected rank deficiency, got {other:?}"),
    }
}

#[test]
fn zero_outside_share_is_an_inversion_error() {
    let f = Matrix::from_rows(&[&[1.0, 0.0][..], &[2.0, 1.0]]).unwrap();
    let m = Market::new(7, f, vec![0.5, 0.5]).unwrap();
    match fit_mnl(&[m]) {
        Err(Error::Inversion { market, outside_share }) => {
            assert_eq!(market, 7);
            assert!(outside_share <= 0.0);
        }
        other => panic!("expected inversion error, got {other:?}"),
    }
}

#[test]
fn mean_predictor_averages_every_share() {
    let f = Matrix::from_rows(&[&[1.0][..], &[2.0]]).unwrap();
    let m = Market::new(0, f, vec![0.1, 0.3]).unwrap();
    let fit = fit_mean(&[m.clone()]).unwrap();
    assert!((fit.mean_share - 0.2).abs() < 1e-15);
    assert_eq!(fit.predict_market(&m).unwrap(), vec![0.2, 0.2]);
}

#[test]
fn rcl_with_zero_sd_nests_mnl() {
    let cfg = SimConfig {
        m: 40,
        k: 2,
        n_consumers: 300,
        seed: 3,
        ..SimConfig::default()
    };
    let data = simulate(&cfg).unwrap();
    let mnl = fit_mnl(&data.markets).unwrap();
    let rcl_cfg = RclConfig {
        fix_sd_zero: true,
        iterations: 1,
        lr: 1e-12,
        ..RclConfig::default()
    };
    let fit = fit_rcl(&data.markets, &rcl_cfg).unwrap();
    assert!(fit.sd.iter().all(|s| *s == 0.0));
    let mnl_obj = share_mse(&mnl, &data.markets).unwrap();
    let rcl_obj = fit.objective_on(&data.markets).unwrap();
    assert!((mnl_obj - rcl_obj).abs() < 1e-12, "{mnl_obj} vs {rcl_obj}");
}

#[test]
fn rcl_fit_beats_mnl_on_rcl_data() {
    let cfg = SimConfig {
        m: 100,
        k: 3,
        n_consumers: 2000,
        seed: 11,
        ..SimConfig::default()
    };
    let data = simulate(&cfg).unwrap();
    let mnl = fit_mnl(&data.markets).unwrap();
    let rcl = fit_rcl(&data.markets, &RclConfig::default()).unwrap();
    let (a, b) = (share_mse(&mnl, &data.markets).unwrap(), share_mse(&rcl, &data.markets).unwrap());
    assert!(b < a, "RCL {b} vs MNL {a}");
    assert!((rcl.objective - b).abs() < 1e-12);
}

#[test]
fn rcl_gradient_matches_finite_differences() {
    let cfg = SimConfig {
        m: 8,
        k: 2,
        n_consumers: 200,
        seed: 4,
        ..SimConfig::default()
    };
    let data = simulate(&cfg).unwrap();
    let mut rng = RngStream::new(4, 2);
    let b = Matrix::from_vec(50, 3, (0..150).map(|_| rng.random_range(-2.0..1.0)).collect()).unwrap();
    let mut g = Matrix::zeros(50, 3);
    rcl::loss_for_test(&b, &data.markets, Some(&mut g));
    let h = 1e-6;
    for idx in [0, 7, 31, 77, 149] {
        let mut up = b.clone();
        up.data_mut()[idx] += h;
        let mut dn = b.clone();
        dn.data_mut()[idx] -= h;
        let num = (rcl::loss_for_test(&up, &data.markets, None) - rcl::loss_for_test(&dn, &data.markets, None))
            / (2.0 * h);
        let a = g.data()[idx];
        assert!((a - num).abs() <= 1e-6 * a.abs().max(num.abs()) + 1e-12, "{idx}: {a} vs {num}");
    }
}

fn tiny_grid() -> StackedGrid {
    StackedGrid {
        hidden_layers: vec![1, 2],
        nodes: vec![16],
        lr: vec![1e-2],
        epochs: vec![2],
        folds: 3,
        batch_markets: 4,
        seed: 0,
    }
}

#[test]
fn stacked_np_fits_and_rejects_other_market_sizes() {
    let cfg = SimConfig {
        j: 4,
        m: 30,
        k: 2,
        n_consumers: 200,
        seed: 6,
        ..SimConfig::default()
    };
    let data = simulate(&cfg).unwrap();
    let model = fit_stacked_np(&data.markets, &tiny_grid()).unwrap();
    assert!(model.cv_mse.is_finite());
    let p = model.predict_market(&data.markets[0]).unwrap();
    assert_eq!(p.len(), 4);
    assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));

    let bigger = SimConfig { j: 5, ..cfg };
    let other = simulate(&bigger).unwrap();
    assert!(matches!(model.predict_market(&other.markets[0]), Err(Error::Structural(_))));
    let mut mixed = data.markets.clone();
    mixed.push(other.markets[0].clone());
    assert!(matches!(fit_stacked_np(&mixed, &tiny_grid()), Err(Error::Structural(_))));
}

#[test]
fn stacked_np_parameter_count_grows_with_market_size() {
    let grid = StackedGrid {
        hidden_layers: vec![1],
        epochs: vec![1],
        ..tiny_grid()
    };
    let count = |j: usize| {
        let cfg = SimConfig {
            j,
            m: 6,
            k: 1,
            n_consumers: 100,
            ..SimConfig::default()
        };
        fit_stacked_np(&simulate(&cfg).unwrap().markets, &grid).unwrap().num_params()
    };
    let (a, b, c) = (count(2), count(4), count(6));
    assert!(a < b && b < c);
    // Linear in J: equal increments.
    assert_eq!(b - a, c - b);
}

#[test]
fn default_grid_has_81_cells() {
    assert_eq!(StackedGrid::default().cells().len(), 81);
}

#[test]
fn fits_survive_a_json_round_trip() {
    let cfg = SimConfig {
        m: 20,
        k: 2,
        n_consumers: 200,
        seed: 8,
        ..SimConfig::default()
    };
    let data = simulate(&cfg).unwrap();
    let small_rcl = RclConfig {
        iterations: 5,
        draws: 100,
        ..RclConfig::default()
    };
    let fits = [
        BaselineFit::Mnl(fit_mnl(&data.markets).unwrap()),
        BaselineFit::Rcl(fit_rcl(&data.markets, &small_rcl).unwrap()),
        BaselineFit::Mean(fit_mean(&data.markets).unwrap()),
        BaselineFit::StackedNp(
            fit_stacked_np(&data.markets, &StackedGrid { hidden_layers: vec![1], ..tiny_grid() }).unwrap(),
        ),
    ];
    let dir = tempfile::tempdir().unwrap();
    for (i, fit) in fits.iter().enumerate() {
        let path = dir.path().join(format!("fit{i}.json"));
        fit.save(&path).unwrap();
        let back = BaselineFit::load(&path).unwrap();
        for m in &data.markets[..3] {
            assert_eq!(fit.predict_market(m).unwrap(), back.predict_market(m).unwrap());
        }
    }
    let bytes = fits[0].to_json().unwrap();
    assert!(matches!(BaselineFit::from_json(&bytes[..bytes.len() / 2]), Err(Error::Corrupt(_))));
}
