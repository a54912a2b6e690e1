use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one buffer per tensor.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Self { m: sizes.iter().map(|&n| vec![0.0; n]).collect(), v: sizes.iter().map(|&n| vec![0.0; n]).collect(), step: 0 }
    }
}

/// One AdamW step with decoupled weight decay: `p *= 1 - lr * wd` (skipped
/// where `exclude` is set), then the bias-corrected Adam update.
pub fn adamw_step(params: &mut [&mut [f64]], grads: &[Vec<f64>], state: &mut AdamState, lr: f64, wd: f64, exclude: &[bool]) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n || exclude.len() != n {
        return Err(shape_err(format!("adamw: {n} tensors, {} grads, {} moments, {} flags", grads.len(), state.m.len(), exclude.len())));
    }
    for i in 0..n {
        let len = params[i].len();
        if grads[i].len() != len || state.m[i].len() != len || state.v[i].len() != len {
            return Err(shape_err(format!("adamw: tensor {i} has {len} values, grad {}", grads[i].len())));
        }
    }
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for i in 0..n {
        let decay = if exclude[i] { 1.0 } else { 1.0 - lr * wd };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (k, p) in params[i].iter_mut().enumerate() {
            let g = grads[i][k];
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g;
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *p *= decay;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_step_matches_scalar_oracle() {
        // Scalar AdamW by hand: m = 0.1 g, v = 0.001 g^2, m_hat = g, v_hat = g^2.
        let (lr, g, p0) = (0.01, -0.3, 0.7);
        let mut p = vec![p0];
        let mut st = AdamState::new([1]);
        adamw_step(&mut [p.as_mut_slice()], &[vec![g]], &mut st, lr, 0.0, &[false]).unwrap();
        let m_hat = (0.1 * g) / 0.1;
        let v_hat = (0.001 * g * g) / (1.0 - 0.999);
        let want = p0 - lr * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - want).abs() < 1e-15);
        assert!((p[0] - (p0 + lr)).abs() < 1e-9);

        // Second step with the same gradient, decay on, against the recursion.
        let wd = 0.5;
        let p1 = p[0];
        adamw_step(&mut [p.as_mut_slice()], &[vec![g]], &mut st, lr, wd, &[false]).unwrap();
        let m = 0.9 * 0.1 * g + 0.1 * g;
        let v = 0.999 * 0.001 * g * g + 0.001 * g * g;
        let want = p1 * (1.0 - lr * wd) - lr * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((p[0] - want).abs() < 1e-15);
    }

    #[test]
    fn excluded_tensors_skip_decay() {
        let mut a = vec![1.0];
        let mut b = vec![1.0];
        let mut st = AdamState::new([1, 1]);
        adamw_step(&mut [a.as_mut_slice(), b.as_mut_slice()], &[vec![0.0], vec![0.0]], &mut st, 0.1, 0.1, &[false, true]).unwrap();
        assert!((a[0] - 0.99).abs() < 1e-15);
        assert_eq!(b[0], 1.0);
        assert!(adamw_step(&mut [a.as_mut_slice()], &[vec![0.0]], &mut st, 0.1, 0.1, &[false]).is_err());
    }

    #[test]
    fn clipping_examples() {
        let mut g = vec![vec![0.3], vec![0.4]];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 0.5);
        assert_eq!(g, vec![vec![0.3], vec![0.4]]);
        let mut g = vec![vec![0.0, 4.0]];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 4.0);
        assert_eq!(g, vec![vec![0.0, 1.0]]);
    }

    proptest! {
        #[test]
        fn zero_lr_leaves_params_bit_identical(ps in proptest::collection::vec(-10.0f64..10.0, 1..20), seed in 0u64..100, wd in 0.0f64..1.0) {
            let grads: Vec<f64> = ps.iter().enumerate().map(|(i, p)| p * 0.3 + (i as f64 + seed as f64).sin()).collect();
            let mut q = ps.clone();
            let mut st = AdamState::new([q.len()]);
            adamw_step(&mut [q.as_mut_slice()], &[grads], &mut st, 0.0, wd, &[false]).unwrap();
            prop_assert_eq!(q, ps);
        }

        #[test]
        fn clipping_never_increases_norm(gs in proptest::collection::vec(-100.0f64..100.0, 1..30), max in 0.01f64..50.0) {
            let mut g = vec![gs];
            let before = global_norm(&g);
            clip_grad_norm(&mut g, max);
            let after = global_norm(&g);
            prop_assert!(after <= before + 1e-12);
            prop_assert!(after <= max * (1.0 + 1e-12) || after == before);
        }
    }
}
