use super::*;
use rand::Rng;
use rand::seq::SliceRandom;

fn random_market(rng: &mut RngStream, id: u64, j: usize, k_in: usize) -> Market {
    let data = (0..j * k_in).map(|_| rng.random_range(-2.0..2.0)).collect();
    let f = Matrix::from_vec(j, k_in, data).unwrap();
    let shares = vec![0.5 / j as f64; j];
    Market::new(id, f, shares).unwrap()
}

fn small_arch() -> SetArch {
    SetArch {
        phi_hidden: vec![16, 16],
        embed_dim: 8,
        rho_hidden: vec![16],
    }
}

#[test]
fn permutation_of_competitors_is_exact() {
    let mut rng = RngStream::new(11, 0);
    let model = DeepSetModel::new(4, SetArch::default(), &mut rng).unwrap();
    let market = random_market(&mut rng, 0, 10, 4);
    for j in 0..10 {
        let base = model.predict_share(&market, j).unwrap();
        for _ in 0..5 {
            let mut perm: Vec<usize> = (0..10).collect();
            perm.shuffle(&mut rng);
            let shuffled = market.permuted(&perm);
            let pos = perm.iter().position(|&p| p == j).unwrap();
            let again = model.predict_share(&shuffled, pos).unwrap();
            assert_eq!(base.to_bits(), again.to_bits());
        }
    }
}

#[test]
fn predict_market_follows_permutation() {
    let mut rng = RngStream::new(12, 0);
    let model = DeepSetModel::new(3, SetArch::default(), &mut rng).unwrap();
    let market = random_market(&mut rng, 0, 9, 3);
    let base = model.predict_market(&market).unwrap();
    let mut perm: Vec<usize> = (0..9).collect();
    perm.shuffle(&mut rng);
    let out = model.predict_market(&market.permuted(&perm)).unwrap();
    for (i, &p) in perm.iter().enumerate() {
        assert!((out[i] - base[p]).abs() < 1e-15);
    }
}

#[test]
fn duplicate_competitor_changes_prediction() {
    let mut rng = RngStream::new(13, 0);
    let model = DeepSetModel::new(2, small_arch(), &mut rng).unwrap();
    let market = random_market(&mut rng, 0, 3, 2);
    let before = model.predict_share(&market, 0).unwrap();
    let dup_rows: Vec<Vec<f64>> = (0..3)
        .map(|r| market.features.row(r).to_vec())
        .chain(std::iter::once(market.features.row(2).to_vec()))
        .collect();
    let dup = Market::new(1, Matrix::from_rows(&dup_rows).unwrap(), vec![0.1; 4]).unwrap();
    let after = model.predict_share(&dup, 0).unwrap();
    assert_ne!(before, after);
}

#[test]
fn zero_rho_gives_half() {
    let mut rng = RngStream::new(14, 0);
    let mut model = DeepSetModel::new(3, small_arch(), &mut rng).unwrap();
    let rho = model.network_mut().rho_mut();
    for w in rho.weights_mut() {
        w.map_inplace(|_| 0.0);
    }
    for b in rho.biases_mut() {
        b.iter_mut().for_each(|v| *v = 0.0);
    }
    let market = random_market(&mut rng, 0, 4, 3);
    assert_eq!(model.predict_share(&market, 2).unwrap(), 0.5);
}

#[test]
fn single_product_market_pools_zero() {
    let mut rng = RngStream::new(15, 0);
    let model = DeepSetModel::new(3, small_arch(), &mut rng).unwrap();
    let market = random_market(&mut rng, 0, 1, 3);
    let v = model.predict_market(&market).unwrap();
    assert_eq!(v.len(), 1);
    // Explicit evaluation with a zero pooled vector.
    let net = model.network();
    let x = net.standardize(&market.features).unwrap();
    let z = net.phi1().predict(&x).unwrap();
    let direct = net.rho().predict(&z).unwrap().get(0, 0);
    assert!((v[0] - direct).abs() < 1e-15);
    assert!((model.predict_share(&market, 0).unwrap() - direct).abs() < 1e-15);
}

#[test]
fn total_minus_own_matches_direct_sum() {
    let mut rng = RngStream::new(16, 0);
    let model = DeepSetModel::new(5, SetArch::default(), &mut rng).unwrap();
    for j_count in [2, 7, 25] {
        let market = random_market(&mut rng, 0, j_count, 5);
        let fast = model.predict_market(&market).unwrap();
        for (j, f) in fast.iter().enumerate() {
            let direct = model.predict_share(&market, j).unwrap();
            assert!((f - direct).abs() < 1e-10);
        }
    }
}

#[test]
fn parameter_count_is_independent_of_market_size() {
    let mut rng = RngStream::new(17, 0);
    let model = DeepSetModel::new(11, SetArch::default(), &mut rng).unwrap();
    let expected = model.num_params();
    for j in 1..=25 {
        let market = random_market(&mut rng, j as u64, j, 11);
        assert_eq!(model.predict_market(&market).unwrap().len(), j);
        assert_eq!(model.num_params(), expected);
    }
}

#[test]
fn product_labels_do_not_matter() {
    let mut rng = RngStream::new(18, 0);
    let model = DeepSetModel::new(3, small_arch(), &mut rng).unwrap();
    let market = random_market(&mut rng, 3, 6, 3);
    let mut relabeled = market.clone();
    relabeled.id = 999;
    relabeled.product_ids = vec![40, 7, 13, 2, 99, 5];
    assert_eq!(
        model.predict_market(&market).unwrap(),
        model.predict_market(&relabeled).unwrap()
    );
}

#[test]
fn wrong_feature_width_is_a_shape_error() {
    let mut rng = RngStream::new(19, 0);
    let model = DeepSetModel::new(3, small_arch(), &mut rng).unwrap();
    let market = random_market(&mut rng, 0, 4, 5);
    assert!(matches!(model.predict_market(&market), Err(Error::Shape { .. })));
    assert!(matches!(model.predict_share(&market, 0), Err(Error::Shape { .. })));
}

#[test]
fn save_load_roundtrip_and_corruption() {
    let mut rng = RngStream::new(20, 0);
    let mut model = DeepSetModel::new(3, small_arch(), &mut rng).unwrap();
    let markets: Vec<Market> = (0..3).map(|i| random_market(&mut rng, i, 4, 3)).collect();
    model.calibrate(&markets).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let loaded = DeepSetModel::load(&path).unwrap();
    assert_eq!(loaded, model);
    for m in &markets {
        let a = model.predict_market(m).unwrap();
        let b = loaded.predict_market(m).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    let bytes = std::fs::read(&path).unwrap();
    assert!(matches!(
        DeepSetModel::from_json(&bytes[..bytes.len() - 40]),
        Err(Error::Corrupt(_))
    ));
    let bumped = String::from_utf8(bytes).unwrap().replacen("\"version\":1", "\"version\":2", 1);
    assert!(matches!(
        DeepSetModel::from_json(bumped.as_bytes()),
        Err(Error::Version { .. })
    ));

    // A model saved for three features rejects a market with four.
    let wide = random_market(&mut rng, 9, 4, 4);
    assert!(matches!(loaded.predict_market(&wide), Err(Error::Shape { .. })));
}

/// Finite-difference check of the pooled backward pass, with a non-uniform
/// upstream gradient so that cross-product terms matter.
#[test]
fn set_network_gradients_match_finite_differences() {
    let mut rng = RngStream::new(21, 0);
    let mut net = SetNetwork::new(3, small_arch(), OutputActivation::Sigmoid, &mut rng).unwrap();
    let markets: Vec<Market> = [3usize, 1, 5]
        .iter()
        .enumerate()
        .map(|(i, &j)| random_market(&mut rng, i as u64, j, 3))
        .collect();
    let packed = net.pack(markets.iter().map(|m| &m.features)).unwrap();
    let coef: Vec<f64> = (0..packed.x.rows()).map(|_| rng.random_range(-1.0..1.0)).collect();
    // L = Σ_r coef_r · out_r
    let loss = |net: &SetNetwork| -> f64 {
        let f = net.forward_train(&packed.x, &packed).unwrap();
        f.out.iter().zip(&coef).map(|(o, c)| o * c).sum()
    };
    let fwd = net.forward_train(&packed.x, &packed).unwrap();
    let grads = net.backward_train(&fwd, &coef).unwrap();

    let h = 1e-5;
    let mut probes = 0;
    let mut check = |which: usize, analytic: Vec<f64>, net: &mut SetNetwork| {
        for (i, a) in analytic.iter().enumerate().step_by(7) {
            let get = |net: &mut SetNetwork| -> *mut f64 {
                let p = match which {
                    0 => &mut net.phi1,
                    1 => &mut net.phi2,
                    _ => &mut net.rho,
                };
                p.param_mut(i).unwrap() as *mut f64
            };
            let ptr = get(net);
            // SAFETY: `ptr` points into `net`, which outlives this block and
            // is not otherwise borrowed while we write through it.
            let orig = unsafe { *ptr };
            unsafe { *ptr = orig + h };
            let up = loss(net);
            unsafe { *ptr = orig - h };
            let down = loss(net);
            unsafe { *ptr = orig };
            let numeric = (up - down) / (2.0 * h);
            let scale = a.abs().max(numeric.abs());
            if scale > 1e-7 {
                assert!(
                    (a - numeric).abs() / scale < 1e-4,
                    "net {which} param {i}: analytic {a} numeric {numeric}"
                );
            } else {
                assert!((a - numeric).abs() < 1e-9);
            }
            probes += 1;
        }
    };
    check(0, grads.phi1.values().collect(), &mut net);
    check(1, grads.phi2.values().collect(), &mut net);
    check(2, grads.rho.values().collect(), &mut net);
    assert!(probes >= 50);
}

#[test]
fn constant_shares_are_learned() {
    let mut rng = RngStream::new(22, 0);
    let markets: Vec<Market> = (0..20)
        .map(|i| {
            let mut m = random_market(&mut rng, i, 5, 2);
            m.shares = vec![0.12; 5];
            m
        })
        .collect();
    let mut model = DeepSetModel::new(2, small_arch(), &mut rng).unwrap();
    let report = train(&mut model, &markets, &TrainConfig::default()).unwrap();
    assert_eq!(report.history.len(), 500);
    let mut err = 0.0;
    let mut n = 0.0;
    for m in &markets {
        for p in model.predict_market(m).unwrap() {
            err += (p - 0.12f64).abs();
            n += 1.0;
        }
    }
    assert!(err / n < 0.01, "MAE {}", err / n);
}

#[test]
fn training_reduces_mse_and_is_deterministic() {
    let mut rng = RngStream::new(23, 0);
    let markets: Vec<Market> = (0..15)
        .map(|i| {
            let mut m = random_market(&mut rng, i, 4, 2);
            // Share decreasing in the first column, increasing in rivals' first column.
            let total: f64 = (0..4).map(|r| m.features.get(r, 0)).sum();
            m.shares = (0..4)
                .map(|r| {
                    let own = m.features.get(r, 0);
                    0.2 * crate::nn::sigmoid(-own + 0.3 * (total - own))
                })
                .collect();
            m
        })
        .collect();
    for seed in 0..3 {
        let run = || {
            let mut r = RngStream::new(seed, 1);
            let mut model = DeepSetModel::new(2, small_arch(), &mut r).unwrap();
            let cfg = TrainConfig {
                epochs: 60,
                batch_markets: Some(4),
                seed,
                ..TrainConfig::default()
            };
            let rep = train(&mut model, &markets, &cfg).unwrap();
            (model, rep)
        };
        let (m1, r1) = run();
        let (m2, _) = run();
        assert!(r1.final_mse < r1.initial_mse);
        assert_eq!(m1, m2);
    }
}

#[test]
fn train_rejects_bad_input() {
    let mut rng = RngStream::new(24, 0);
    let mut model = DeepSetModel::new(2, small_arch(), &mut rng).unwrap();
    assert!(matches!(
        train(&mut model, &[], &TrainConfig::default()),
        Err(Error::Config(_))
    ));
    let mut bad = random_market(&mut rng, 0, 3, 2);
    bad.shares = vec![0.5, 0.5, 0.5];
    assert!(matches!(
        train(&mut model, &[bad], &TrainConfig::default()),
        Err(Error::Validation(_))
    ));
}

#[test]
fn warmup_ramps_linearly_then_decays() {
    let cfg = TrainConfig {
        lr: 1e-3,
        epochs: 101,
        lr_decay: 0.1,
        warmup_epochs: 4,
        ..Default::default()
    };
    assert!((cfg.lr_at(0) - 1e-3 * 0.2 * 0.1f64.powf(0.0)).abs() < 1e-18);
    assert!((cfg.lr_at(1) - 1e-3 * 0.4 * 0.1f64.powf(0.01)).abs() < 1e-18);
    assert!((cfg.lr_at(4) - 1e-3 * 0.1f64.powf(0.04)).abs() < 1e-18);
    assert!((cfg.lr_at(100) - 1e-4).abs() < 1e-18);
    let flat = TrainConfig::default();
    assert_eq!(flat.lr_at(0), flat.lr);
}
