//! Analytic MLP gradients against central finite differences.

use deepchoice::nn::{Matrix, MlpParams, OutputActivation, RngStream};
use rand::Rng;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

/// L = ½ Σ (out − target)², so dL/dout = out − target.
fn loss(p: &MlpParams, x: &Matrix, target: &Matrix) -> f64 {
    let out = p.predict(x).unwrap();
    0.5 * out
        .data()
        .iter()
        .zip(target.data())
        .map(|(o, t)| (o - t).powi(2))
        .sum::<f64>()
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-7 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

fn random_net(rng: &mut RngStream) -> (MlpParams, Matrix, Matrix) {
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![rng.random_range(1..=6)];
    for _ in 0..depth {
        sizes.push(rng.random_range(2..=32));
    }
    sizes.push(rng.random_range(1..=3));
    let out = if rng.random_bool(0.5) {
        OutputActivation::Sigmoid
    } else {
        OutputActivation::Identity
    };
    let mut p = MlpParams::init(&sizes, out, rng).unwrap();
    // Nonzero biases so the bias path is exercised.
    for b in p.biases_mut() {
        b.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
    }
    let batch = rng.random_range(1..=6);
    let x = Matrix::from_vec(
        batch,
        sizes[0],
        (0..batch * sizes[0]).map(|_| rng.random_range(-1.5..1.5)).collect(),
    )
    .unwrap();
    let t = Matrix::from_vec(
        batch,
        p.output_dim(),
        (0..batch * p.output_dim()).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap();
    (p, x, t)
}

#[test]
fn parameter_and_input_gradients_match_central_differences() {
    let mut rng = RngStream::new(2024, 0);
    let mut probes = 0;
    let mut worst: f64 = 0.0;
    for _trial in 0..10 {
        let (mut p, x, t) = random_net(&mut rng);
        let (out, cache) = p.forward(&x).unwrap();
        let mut g_out = out.clone();
        for (g, tv) in g_out.data_mut().iter_mut().zip(t.data()) {
            *g -= tv;
        }
        let (grads, g_in) = p.backward(&cache, &g_out).unwrap();
        let analytic: Vec<f64> = grads.values().collect();
        assert_eq!(analytic.len(), p.num_params());

        let n_probe = analytic.len().min(12);
        for _ in 0..n_probe {
            let i = rng.random_range(0..analytic.len());
            let orig = *p.param_mut(i).unwrap();
            *p.param_mut(i).unwrap() = orig + H;
            let up = loss(&p, &x, &t);
            *p.param_mut(i).unwrap() = orig - H;
            let down = loss(&p, &x, &t);
            *p.param_mut(i).unwrap() = orig;
            let numeric = (up - down) / (2.0 * H);
            let e = rel_err(analytic[i], numeric);
            worst = worst.max(e);
            assert!(e < REL_TOL, "param {i}: {} vs {numeric}", analytic[i]);
            probes += 1;
        }

        // Input gradient, one probe per trial.
        let r = rng.random_range(0..x.rows());
        let c = rng.random_range(0..x.cols());
        let mut xp = x.clone();
        xp.set(r, c, x.get(r, c) + H);
        let up = loss(&p, &xp, &t);
        xp.set(r, c, x.get(r, c) - H);
        let down = loss(&p, &xp, &t);
        let numeric = (up - down) / (2.0 * H);
        assert!(rel_err(g_in.get(r, c), numeric) < REL_TOL);
    }
    assert!(probes >= 50, "only {probes} probes");
    println!("gradient check: {probes} probes, worst relative error {worst:.2e}");
}
