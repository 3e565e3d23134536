use super::truth::{highest_price, inattentive_fraction};
use super::*;
use crate::predictor::SharePredictor;

fn softmax_outside(v: &[f64]) -> Vec<f64> {
    let denom: f64 = 1.0 + v.iter().map(|x| x.exp()).sum::<f64>();
    v.iter().map(|x| x.exp() / denom).collect()
}

fn mnl_truth(k: usize) -> TruthModel {
    let mut rng = RngStream::new(0, 0);
    TruthModel::sample(Dgp::Mnl, &CoefDist::fixed(-1.0, vec![1.0; k]), 1, &mut rng).unwrap()
}

fn market_of(rows: &[Vec<f64>], shares: Vec<f64>) -> Market {
    Market::new(0, Matrix::from_rows(rows).unwrap(), shares).unwrap()
}

#[test]
fn feature_moments() {
    let cfg = SimConfig { j: 10, m: 10_000, k: 1, ..SimConfig::default() };
    let feats = gen_features(&cfg).unwrap();
    let prices: Vec<f64> = feats.iter().flat_map(|f| f.column(0)).collect();
    let xs: Vec<f64> = feats.iter().flat_map(|f| f.column(1)).collect();
    assert_eq!(prices.len(), 100_000);
    let pm = crate::util::mean(&prices);
    assert!((1.97..=2.03).contains(&pm), "price mean {pm}");
    assert!(prices.iter().all(|p| (0.0..4.0).contains(p)));
    let xm = crate::util::mean(&xs);
    let xv = xs.iter().map(|x| (x - xm).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    assert!((0.97..=1.03).contains(&xv), "feature variance {xv}");
    assert_eq!(feats, gen_features(&cfg).unwrap());
}

#[test]
fn single_product_zero_utility_is_half() {
    let mut rng = RngStream::new(1, 0);
    let s = argmax_shares(&[0.0], 10_000, &mut rng);
    assert!((s[0] - 0.5).abs() < 0.02, "{}", s[0]);

    let cfg = SimConfig { j: 1, m: 1, k: 0, dgp: Dgp::Mnl, seed: 3, ..SimConfig::default() };
    let truth = truth_for(&cfg).unwrap();
    let f = Matrix::from_rows(&[[0.0]]).unwrap();
    assert!((truth.shares(&f).unwrap()[0] - 0.5).abs() < 1e-15);
}

#[test]
fn symmetric_products_get_equal_shares() {
    let mut rng = RngStream::new(2, 0);
    let s = argmax_shares(&[0.3, 0.3], 10_000, &mut rng);
    assert!((s[0] - s[1]).abs() < 0.02);
}

#[test]
fn argmax_frequencies_match_closed_form_logit() {
    let v = [-1.2, 0.4, 0.9, -0.1];
    let exact = softmax_outside(&v);
    for (seed, n) in [(3u64, 10_000usize), (4, 100_000)] {
        let mut rng = RngStream::new(seed, 0);
        let s = argmax_shares(&v, n, &mut rng);
        let tol = 3.0 / (n as f64).sqrt();
        for (a, b) in s.iter().zip(&exact) {
            assert!((a - b).abs() < tol, "n={n}: {a} vs {b}");
        }
    }
}

#[test]
fn empty_cells_get_half_counts() {
    let mut rng = RngStream::new(5, 0);
    let s = argmax_shares(&[-40.0, 40.0], 100, &mut rng);
    assert!(s[0] > 0.0 && s[0] < 0.01);
    assert!(s.iter().sum::<f64>() < 1.0);
    assert!((s[0] - 0.5 / 101.0).abs() < 1e-15);
}

#[test]
fn simulated_shares_are_valid() {
    for dgp in [Dgp::Mnl, Dgp::Rcl, Dgp::RclLog, Dgp::RclSin, Dgp::Inattention] {
        let k = if dgp == Dgp::Mnl || dgp == Dgp::Rcl { 3 } else { 0 };
        let cfg = SimConfig { j: 4, m: 20, k, n_consumers: 2000, dgp, seed: 9, ..SimConfig::default() };
        let data = simulate(&cfg).unwrap();
        assert_eq!(data.num_markets(), 20);
        for m in &data.markets {
            m.validate_shares().unwrap();
            assert_eq!(m.num_features(), 1 + k);
        }
        assert_eq!(data, simulate(&cfg).unwrap());
    }
}

#[test]
fn degenerate_rcl_equals_closed_form() {
    let cfg = SimConfig { j: 6, m: 5, k: 3, n_consumers: 500, ..SimConfig::default() };
    let mut rng = RngStream::new(11, 0);
    let dist = CoefDist::fixed(-1.0, vec![0.5, -0.2, 1.0]);
    let truth = TruthModel::sample(Dgp::Rcl, &dist, cfg.n_consumers, &mut rng).unwrap();
    for f in gen_features(&cfg).unwrap() {
        let v: Vec<f64> = (0..6)
            .map(|j| -f.get(j, 0) + 0.5 * f.get(j, 1) - 0.2 * f.get(j, 2) + f.get(j, 3))
            .collect();
        let exact = softmax_outside(&v);
        for (a, b) in truth.shares(&f).unwrap().iter().zip(&exact) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

/// Every draw has a negative price coefficient, so each per-draw logit is
/// strictly decreasing in own price and so is their average.
#[test]
fn own_price_increase_lowers_share_with_frozen_draws() {
    let mut rng = RngStream::new(4, 0);
    let dist = CoefDist { alpha_mean: -1.0, alpha_var: 1.0, beta_mean: vec![0.2, -0.1], beta_var: 1.0 };
    let sampled = TruthModel::sample(Dgp::Rcl, &dist, 1000, &mut rng).unwrap();
    let mut coefs = sampled.coefficients().clone();
    for r in 0..coefs.rows() {
        let a = coefs.get(r, 0);
        coefs.set(r, 0, -a.abs() - 1e-3);
    }
    let truth = TruthModel::from_coefficients(Dgp::Rcl, coefs).unwrap();
    for _ in 0..10 {
        let f = draw_features(5, 2, &mut rng);
        let m = Market::new(0, f.clone(), truth.shares(&f).unwrap()).unwrap();
        for j in 0..5 {
            let up = m.with_price(j, m.price(j) + 0.25);
            assert!(truth.predict_market(&up).unwrap()[j] < m.shares[j]);
        }
    }
}

#[test]
fn nonlinear_transforms() {
    assert_eq!(apply_nonlinear(Transform::Log, 0.5), 0.0);
    assert!((apply_nonlinear(Transform::Log, 1.0) - 9f64.ln()).abs() < 1e-15);
    assert!((apply_nonlinear(Transform::Log, 1.0) - 2.1972).abs() < 1e-4);
    assert!((apply_nonlinear(Transform::Log, 0.0) + 9f64.ln()).abs() < 1e-15);
    assert_eq!(apply_nonlinear(Transform::Sin, 0.0), 0.0);
    assert_eq!(apply_nonlinear(Transform::Identity, 1.7), 1.7);
}

#[test]
fn inattention_mixture() {
    let mut rng = RngStream::new(6, 0);
    let coefs = CoefDist { alpha_mean: -1.0, alpha_var: 1.0, beta_mean: vec![], beta_var: 1.0 };
    let base = TruthModel::sample(Dgp::Rcl, &coefs, 2000, &mut RngStream::new(6, 1)).unwrap();
    let inat = TruthModel::sample(Dgp::Inattention, &coefs, 2000, &mut RngStream::new(6, 1)).unwrap();

    // All prices zero: nobody is inattentive.
    let f = Matrix::from_rows(&[[0.0], [0.0], [0.0]]).unwrap();
    assert_eq!(base.shares(&f).unwrap(), inat.shares(&f).unwrap());

    for _ in 0..20 {
        let f = draw_features(3, 0, &mut rng);
        let prices = f.column(0);
        let star = highest_price(&prices);
        let w = inattentive_fraction(prices[star]);
        assert!((0.0..1.0).contains(&w));
        let s = inat.shares(&f).unwrap();
        let s_base = base.shares(&f).unwrap();
        // j*'s share is the attentive fraction of its full-choice-set share.
        assert!((s[star] - (1.0 - w) * s_base[star]).abs() < 1e-14);
        assert!(s[star] <= 1.0 / (1.0 + prices[star]));
        assert!(s.iter().sum::<f64>() < 1.0);
    }
    assert_eq!(highest_price(&[1.0, 3.0, 3.0]), 1);
    assert!(inattentive_fraction(1e9) > 0.999_999);
}

#[test]
fn new_product_substitutes_from_incumbents() {
    let cfg = SimConfig { j: 4, m: 5, k: 2, n_consumers: 1000, seed: 8, ..SimConfig::default() };
    let data = simulate(&cfg).unwrap();
    let truth = data.truth.as_ref().unwrap();
    let mut rng = RngStream::new(8, 1);
    for m in &data.markets {
        let (aug, shares) = add_new_product(m, truth, &mut rng).unwrap();
        assert_eq!(aug.num_products(), 5);
        assert_eq!(aug.shares, shares);
        for j in 0..4 {
            assert!(shares[j] <= m.shares[j]);
        }
        // A clone of an incumbent takes exactly the incumbent's share.
        let (dup, s) = add_product_row(m, truth, m.features.row(2)).unwrap();
        assert_eq!(dup.num_products(), 5);
        assert!((s[2] - s[4]).abs() < 1e-15);
    }
}

#[test]
fn mnl_elasticity_oracle_matches_logit_formula() {
    let truth = mnl_truth(2);
    let m = market_of(
        &[vec![1.0, 0.3, -0.2], vec![2.5, 1.0, 0.4], vec![0.7, -0.5, 0.1]],
        vec![0.1; 3],
    );
    let s = truth.predict_market(&m).unwrap();
    for j in 0..3 {
        for k in 0..3 {
            let e = true_elasticity(&truth, &m, j, k, 0.01).unwrap();
            let exact = if j == k {
                -m.price(j) * (1.0 - s[j])
            } else {
                m.price(k) * s[k]
            };
            assert!(((e - exact) / exact).abs() < 0.02, "({j},{k}) {e} vs {exact}");
            if j == k {
                assert!(e < 0.0);
            } else {
                assert!(e > 0.0);
            }
        }
    }
    let free = m.with_price(1, 0.0);
    assert!(matches!(
        true_elasticity(&truth, &free, 0, 1, 0.01),
        Err(Error::UndefinedElasticity { .. })
    ));
}

#[test]
fn split_by_market() {
    let cfg = SimConfig { j: 2, m: 100, k: 1, n_consumers: 100, ..SimConfig::default() };
    let data = simulate(&cfg).unwrap();
    let (a, b) = split(&data, 0.8, &mut RngStream::new(1, 0)).unwrap();
    assert_eq!((a.num_markets(), b.num_markets()), (80, 20));
    let mut ids: Vec<u64> = a.markets.iter().chain(&b.markets).map(|m| m.id).collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..100).collect::<Vec<_>>());
    let (a2, _) = split(&data, 0.8, &mut RngStream::new(1, 0)).unwrap();
    assert_eq!(a, a2);
    for r in [0.0, 1.0, -0.5, 0.001, 0.999] {
        assert!(matches!(split(&data, r, &mut RngStream::new(1, 0)), Err(Error::Config(_))));
    }
}

#[test]
fn csv_round_trip_is_lossless() {
    let cfg = SimConfig { j: 3, m: 6, k: 2, n_consumers: 300, ..SimConfig::default() };
    let mut markets = simulate(&cfg).unwrap().markets;
    markets[2].product_ids = vec![7, 3, 11];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    write_dataset_csv(&markets, &path).unwrap();
    assert_eq!(read_dataset_csv(&path).unwrap(), markets);

    let with_mu: Vec<Market> = markets
        .iter()
        .map(|m| {
            let mu: Vec<f64> = (0..m.num_products()).map(|j| 0.1 * j as f64 - 1e-17).collect();
            let mut out = m.clone();
            out.features = m.features.append_column(&mu).unwrap();
            out.mu_col = Some(3);
            out
        })
        .collect();
    write_dataset_csv(&with_mu, &path).unwrap();
    let back = read_dataset_csv(&path).unwrap();
    assert_eq!(back, with_mu);
    assert_eq!(back[0].num_characteristics(), 2);
}

#[test]
fn csv_missing_column_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "market_id,product_id,x1,share\n0,0,1.0,0.2\n").unwrap();
    let err = read_dataset_csv(&path).unwrap_err();
    assert!(err.to_string().contains("price"), "{err}");
}

#[test]
fn presets_validate() {
    for name in ["baseline-rcl", "baseline-mnl", "rcl-log", "rcl-sin", "inattention", "coverage", "coverage-mnl"] {
        SimConfig::preset(name).unwrap().validate().unwrap();
    }
    assert!(SimConfig::preset("nope").is_err());
    let bad = SimConfig { dgp: Dgp::Inattention, k: 2, ..SimConfig::default() };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}
