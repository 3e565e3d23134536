//! Adam with bias correction.

use super::mlp::{MlpGrads, MlpParams};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct AdamState {
    first: MlpGrads,
    second: MlpGrads,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zero accumulators shaped like `params`, with β₁=0.9, β₂=0.999, ε=1e-8.
    pub fn new(params: &MlpParams) -> Self {
        Self {
            first: MlpGrads::zeros_like(params),
            second: MlpGrads::zeros_like(params),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

fn same_shape(params: &MlpParams, g: &MlpGrads) -> bool {
    g.weights.len() == params.weights().len()
        && g
            .weights
            .iter()
            .zip(params.weights())
            .all(|(a, b)| a.rows() == b.rows() && a.cols() == b.cols())
        && g
            .biases
            .iter()
            .zip(params.biases())
            .all(|(a, b)| a.len() == b.len())
}

/// One Adam update of `params` in place.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpGrads,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !same_shape(params, grads) || !same_shape(params, &state.first) {
        return Err(Error::shape(
            "adam gradient layers",
            params.weights().len(),
            grads.weights.len(),
        ));
    }
    if let Some(layer) = grads.first_non_finite_layer() {
        return Err(Error::NonFinite(format!("gradient of layer {layer}")));
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);

    let step_size = lr / c1;
    let inv_c2 = 1.0 / c2;
    let fused = |p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = flush(b1 * m[i] + (1.0 - b1) * gi);
            v[i] = flush(b2 * v[i] + (1.0 - b2) * gi * gi);
            p[i] -= step_size * m[i] / ((v[i] * inv_c2).sqrt() + eps);
        }
    };
    let AdamState { first, second, .. } = state;
    for l in 0..grads.weights.len() {
        fused(
            params.weights_mut()[l].data_mut(),
            first.weights[l].data_mut(),
            second.weights[l].data_mut(),
            grads.weights[l].data(),
        );
        fused(
            &mut params.biases_mut()[l],
            &mut first.biases[l],
            &mut second.biases[l],
            &grads.biases[l],
        );
    }
    Ok(())
}

/// Zeroes moments small enough to drift into the subnormal range, where
/// arithmetic is far slower and the values carry no information.
fn flush(x: f64) -> f64 {
    if x.abs() < 1e-200 {
        0.0
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Matrix, OutputActivation, RngStream};

    fn scalar_net(w: f64) -> MlpParams {
        // 1 → 1 → 1 with identity-like path: output = w2 * relu(w1 * x + b1) + b2.
        MlpParams::from_parts(
            vec![
                Matrix::from_vec(1, 1, vec![w]).unwrap(),
                Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            ],
            vec![vec![0.0], vec![0.0]],
            OutputActivation::Identity,
        )
        .unwrap()
    }

    #[test]
    fn zero_grads_leave_params() {
        let mut p = MlpParams::init(&[2, 3, 1], OutputActivation::Identity, &mut RngStream::new(1, 0))
            .unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &MlpGrads::zeros_like(&before), &mut st, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn constant_gradient_moves_against_sign() {
        let mut p = scalar_net(0.5);
        let mut st = AdamState::new(&p);
        let mut g = MlpGrads::zeros_like(&p);
        g.weights[0].set(0, 0, 2.0);
        let mut prev = p.weights()[0].get(0, 0);
        for _ in 0..100 {
            adam_step(&mut p, &g, &mut st, 0.01).unwrap();
            let now = p.weights()[0].get(0, 0);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = (w - 3)^2 on the first-layer weight.
        let mut p = scalar_net(0.0);
        let mut st = AdamState::new(&p);
        let mut reached = None;
        for step in 0..2000 {
            let w = p.weights()[0].get(0, 0);
            let mut g = MlpGrads::zeros_like(&p);
            g.weights[0].set(0, 0, 2.0 * (w - 3.0));
            adam_step(&mut p, &g, &mut st, 0.05).unwrap();
            if reached.is_none() && (p.weights()[0].get(0, 0) - 3.0).abs() < 1e-2 {
                reached = Some(step);
            }
        }
        assert!(reached.is_some());
        assert!((p.weights()[0].get(0, 0) - 3.0).abs() < 1e-2);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut p = scalar_net(1.0);
        let mut st = AdamState::new(&p);
        let mut g = MlpGrads::zeros_like(&p);
        g.biases[1][0] = f64::NAN;
        match adam_step(&mut p, &g, &mut st, 0.1) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("layer 1")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
