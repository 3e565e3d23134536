use proptest::prelude::*;

use super::*;
use crate::baselines::logit_shares;
use crate::deepset::{DeepSetModel, SetArch};
use crate::nn::{Matrix, RngStream};
use crate::predictor::FnPredictor;
use crate::sim::{Dgp, SimConfig};

fn mnl_oracle(alpha: f64, beta: f64) -> impl SharePredictor {
    FnPredictor::new("mnl_oracle", move |m: &Market| {
        let u: Vec<f64> = (0..m.num_products())
            .map(|j| alpha * m.price(j) + beta * m.characteristics(j).iter().sum::<f64>())
            .collect();
        Ok(logit_shares(&u))
    })
}

fn market(rows: &[[f64; 2]]) -> Market {
    let r: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
    let f = Matrix::from_rows(&r).unwrap();
    let n = rows.len();
    Market::new(0, f, vec![0.5 / n as f64; n]).unwrap()
}

#[test]
fn mnl_own_elasticities_match_the_closed_form() {
    let m = market(&[[1.0, 0.3], [2.5, -0.4], [0.7, 1.2], [3.1, 0.0]]);
    let oracle = mnl_oracle(-1.0, 1.0);
    let s = oracle.predict_market(&m).unwrap();
    let e = elasticity_matrix(&oracle, &m, PriceShift::Pct(0.01)).unwrap();
    for j in 0..4 {
        let exact = -1.0 * m.price(j) * (1.0 - s[j]);
        let got = e.get(j, j).unwrap();
        assert!(((got - exact) / exact).abs() < 0.02, "{j}: {got} vs {exact}");
        for k in 0..4 {
            if k != j {
                let exact = 1.0 * m.price(k) * s[k];
                let got = e.get(j, k).unwrap();
                assert!(((got - exact) / exact).abs() < 0.02);
            }
        }
    }
}

#[test]
fn constant_predictor_has_zero_elasticities() {
    let m = market(&[[1.0, 0.0], [2.0, 1.0], [3.0, 2.0]]);
    let c = FnPredictor::new("const", |m: &Market| Ok(vec![0.2; m.num_products()]));
    let e = elasticity_matrix(&c, &m, PriceShift::Pct(0.01)).unwrap();
    assert!(e.own().iter().chain(&e.cross()).all(|v| *v == Some(0.0)));
}

#[test]
fn zero_price_and_zero_share_entries_are_undefined() {
    let m = market(&[[0.0, 0.0], [2.0, 1.0]]);
    let p = FnPredictor::new("p", |m: &Market| Ok(vec![0.0, 0.1 + 0.01 * m.price(1)]));
    let e = elasticity_matrix(&p, &m, PriceShift::Pct(0.01)).unwrap();
    // Column 0 has price zero; row 0 has share zero.
    assert_eq!(e.get(0, 0), None);
    assert_eq!(e.get(1, 0), None);
    assert_eq!(e.get(0, 1), None);
    assert!(e.get(1, 1).is_some());
    assert_eq!(e.num_undefined(), 3);
}

#[test]
fn absolute_shift_divides_by_the_relative_price_change() {
    let m = market(&[[2.0, 0.0]]);
    // s = 0.1·p, so the elasticity is exactly 1 for any shift.
    let p = FnPredictor::new("lin", |m: &Market| Ok(vec![0.1 * m.price(0)]));
    let e = elasticity_matrix(&p, &m, PriceShift::Abs(0.5)).unwrap();
    assert!((e.get(0, 0).unwrap() - 1.0).abs() < 1e-12);
    assert!(matches!(
        elasticity_matrix(&p, &m, PriceShift::Abs(0.0)),
        Err(Error::Config(_))
    ));
}

#[test]
fn mae_rmse_hand_values() {
    assert_eq!(mae_rmse(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), (1.0, 1.0));
    assert_eq!(mae_rmse(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), (0.0, 0.0));
    let (mae, rmse) = mae_rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
    assert_eq!(mae, 3.5);
    assert!((rmse - 12.5f64.sqrt()).abs() < 1e-15);
    assert!(mae_rmse(&[], &[]).is_err());
    assert!(mae_rmse(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn deepset_elasticities_follow_competitor_permutations() {
    let m = market(&[[1.0, 0.3], [2.5, -0.4], [0.7, 1.2], [3.1, 0.0], [1.9, 0.8]]);
    let model = DeepSetModel::new(2, SetArch::default(), &mut RngStream::new(3, 0)).unwrap();
    let e = elasticity_matrix(&model, &m, PriceShift::Pct(0.01)).unwrap();
    let perm = [3, 0, 4, 1, 2];
    let ep = elasticity_matrix(&model, &m.permuted(&perm), PriceShift::Pct(0.01)).unwrap();
    for a in 0..5 {
        for b in 0..5 {
            assert_eq!(ep.get(a, b), e.get(perm[a], perm[b]));
        }
    }
}

#[test]
fn benchmark_emits_one_row_per_estimator_and_records_failures() {
    let cfg = BenchmarkConfig {
        sim: SimConfig {
            j: 3,
            m: 30,
            k: 1,
            n_consumers: 300,
            dgp: Dgp::Rcl,
            ..SimConfig::default()
        },
        reps: 2,
        estimators: vec![Estimator::Mnl, Estimator::Mean, Estimator::StackedNp],
        stacked: crate::baselines::StackedGrid {
            hidden_layers: vec![1],
            nodes: vec![8],
            lr: vec![1e-2],
            epochs: vec![1],
            folds: 2,
            ..Default::default()
        },
        new_product: true,
        ..BenchmarkConfig::default()
    };
    let t = benchmark_run(&cfg).unwrap();
    for (_, rows) in t.tables() {
        assert_eq!(rows.len(), 3);
    }
    let mnl = BenchmarkTables::find(&t.share, Estimator::Mnl).unwrap();
    assert_eq!(mnl.n_obs, 2 * 6 * 3);
    assert!(mnl.mae <= mnl.rmse);
    let cross = BenchmarkTables::find(&t.cross_elasticity, Estimator::Mnl).unwrap();
    assert_eq!(cross.n_obs, 2 * 6 * 6);
    let mean_own = BenchmarkTables::find(&t.own_elasticity, Estimator::Mean).unwrap();
    // A constant predictor's elasticities are zero, so its error is the
    // mean absolute true elasticity.
    assert!(mean_own.mae > 0.0);
    let np = BenchmarkTables::find(&t.new_product, Estimator::StackedNp).unwrap();
    assert_eq!(np.n_obs, 0);
    assert!(np.mae.is_nan());
    let np_share = BenchmarkTables::find(&t.share, Estimator::StackedNp).unwrap();
    assert!(np_share.n_obs > 0);
    let mnl_np = BenchmarkTables::find(&t.new_product, Estimator::Mnl).unwrap();
    assert_eq!(mnl_np.n_obs, 2 * 6 * 4);
}

#[test]
fn metric_rows_serialize_with_table_columns() {
    let row = MetricRow {
        dgp: "rcl".into(),
        j: 10,
        m: 100,
        k: 10,
        estimator: "deepset".into(),
        mae: 0.1,
        rmse: 0.2,
        n_obs: 5,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(&row).unwrap();
    let s = String::from_utf8(w.into_inner().unwrap()).unwrap();
    assert!(s.starts_with("dgp,J,M,K,estimator,MAE,RMSE,n_obs\n"));
}

#[test]
fn curve_has_one_point_per_price_and_predictor() {
    let m = market(&[[1.0, 0.0], [2.0, 0.0]]);
    let oracle = mnl_oracle(-1.0, 0.0);
    let prices = [0.5, 1.0, 2.0];
    let pts = elasticity_curve(&[&oracle, &oracle], &m, 0, &prices, PriceShift::Pct(0.01)).unwrap();
    assert_eq!(pts.len(), 6);
    assert_eq!(pts[1].price, 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mnl_oracle_signs(rows in prop::collection::vec((0.05f64..4.0, -2.0f64..2.0), 2..8)) {
        let rows: Vec<[f64; 2]> = rows.into_iter().map(|(p, x)| [p, x]).collect();
        let m = market(&rows);
        let e = elasticity_matrix(&mnl_oracle(-1.0, 1.0), &m, PriceShift::Pct(0.01)).unwrap();
        for v in e.own() {
            prop_assert!(v.unwrap() < 0.0);
        }
        for v in e.cross() {
            prop_assert!(v.unwrap() > 0.0);
        }
    }

    #[test]
    fn rmse_is_at_least_mae(e in prop::collection::vec(-10.0f64..10.0, 1..50)) {
        let zeros = vec![0.0; e.len()];
        let (mae, rmse) = mae_rmse(&e, &zeros).unwrap();
        prop_assert!(rmse >= mae - 1e-12);
    }
}
