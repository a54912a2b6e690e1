//! Causal speed-adaptive low-pass filter.
//!
//! Each joint is smoothed independently with an exponential filter whose
//! blend factor grows with the size of the current step:
//!
//! ```text
//! v_t     = |x_t - y_{t-1}| / Te
//! alpha_t = 2*pi*beta*v_t*Te / (1 + 2*pi*beta*v_t*Te)
//! y_t     = alpha_t * x_t + (1 - alpha_t) * y_{t-1}
//! ```
//!
//! Small steps are suppressed and large ones pass nearly untouched. The
//! state starts at the first input, so there is no startup transient.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Sweep grid for `beta`, in 1/degree when trajectories are in degrees.
pub const DEFAULT_BETA_GRID: [f64; 7] = [0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub beta: f64,
    /// Sampling period `Te`, seconds.
    pub sample_period: f64,
}

impl FilterParams {
    pub fn new(beta: f64, sample_period: f64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!("beta must be finite and >= 0, got {beta}")));
        }
        if !(sample_period > 0.0) || !sample_period.is_finite() {
            return Err(Error::InvalidArgument(format!("sample period must be > 0, got {sample_period}")));
        }
        Ok(Self { beta, sample_period })
    }

    /// Blend factor for a step of size `|x_t - y_{t-1}|`.
    pub fn alpha(&self, step: f64) -> f64 {
        let speed = step.abs() / self.sample_period;
        let r = 2.0 * PI * self.beta * speed * self.sample_period;
        r / (1.0 + r)
    }
}

/// Previous output of a single-channel filter; empty until the first sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FilterState {
    prev_output: Option<f64>,
}

impl FilterState {
    pub fn prev_output(&self) -> Option<f64> {
        self.prev_output
    }
}

pub fn filter_step(x: f64, state: &mut FilterState, params: &FilterParams) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("filter input".into()));
    }
    let out = match state.prev_output {
        None => x,
        Some(prev) => {
            let a = params.alpha(x - prev);
            a * x + (1.0 - a) * prev
        }
    };
    state.prev_output = Some(out);
    Ok(out)
}

/// Filters a `[J, T]` trajectory joint by joint.
pub fn filter_trajectory(traj: &Tensor, params: &FilterParams) -> Result<Tensor> {
    let (j, t) = traj.dims2()?;
    if t == 0 || j == 0 {
        return Err(Error::InvalidArgument("cannot filter an empty trajectory".into()));
    }
    let mut out = Vec::with_capacity(j * t);
    for r in 0..j {
        let mut state = FilterState::default();
        for &x in &traj.data()[r * t..(r + 1) * t] {
            out.push(filter_step(x, &mut state, params)?);
        }
    }
    Tensor::new(traj.shape().to_vec(), out)
}

/// Filters every trajectory at every `beta`, sharing one sample period.
pub fn beta_sweep(trajs: &[Tensor], betas: &[f64], sample_period: f64) -> Result<Vec<(f64, Vec<Tensor>)>> {
    betas
        .iter()
        .map(|&beta| {
            let params = FilterParams::new(beta, sample_period)?;
            let filtered = trajs.iter().map(|t| filter_trajectory(t, &params)).collect::<Result<Vec<_>>>()?;
            Ok((beta, filtered))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::mean_speed;
    use proptest::prelude::*;

    fn row(values: &[f64]) -> Tensor {
        Tensor::matrix(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn zero_motion_leaves_output_unchanged() {
        let p = FilterParams::new(1.0, 0.02).unwrap();
        let mut s = FilterState::default();
        filter_step(3.0, &mut s, &p).unwrap();
        assert_eq!(p.alpha(0.0), 0.0);
        assert_eq!(filter_step(3.0, &mut s, &p).unwrap(), 3.0);
    }

    #[test]
    fn closed_form_unit_step() {
        let p = FilterParams::new(1.0, 0.02).unwrap();
        let mut s = FilterState::default();
        filter_step(0.0, &mut s, &p).unwrap();
        let y = filter_step(1.0, &mut s, &p).unwrap();
        // v = 50, 2*pi*beta*v*Te = 2*pi.
        let expected = 2.0 * PI / (1.0 + 2.0 * PI);
        assert!((y - expected).abs() < 1e-12);
        assert!((expected - 0.862_697_4).abs() < 1e-7);
    }

    #[test]
    fn hand_stepped_step_response() {
        let p = FilterParams::new(1.0, 0.02).unwrap();
        let mut x = vec![0.0; 8];
        x[5..].iter_mut().for_each(|v| *v = 1.0);
        let out = filter_trajectory(&row(&x), &p).unwrap();
        assert!(out.data()[..5].iter().all(|&v| v == 0.0));
        // Each step: r = 2*pi*|1 - y|, y <- y + r/(1+r) * (1 - y).
        let mut y: f64 = 0.0;
        for k in 5..8 {
            let r = 2.0 * PI * (1.0 - y).abs();
            y += r / (1.0 + r) * (1.0 - y);
            assert!((out.data()[k] - y).abs() < 1e-12);
        }
        assert!((out.data()[5] - 0.862_697_4).abs() < 1e-7);
        assert!(out.data()[7] > out.data()[6] && out.data()[6] > out.data()[5]);
    }

    #[test]
    fn limits_of_beta() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin() * 10.0 + i as f64 * 0.01).collect();
        let frozen = filter_trajectory(&row(&x), &FilterParams::new(0.0, 0.01).unwrap()).unwrap();
        assert!(frozen.data().iter().all(|&v| v == x[0]));
        let pass = filter_trajectory(&row(&x), &FilterParams::new(1e12, 0.01).unwrap()).unwrap();
        for (a, b) in pass.data().iter().zip(&x) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_input_is_untouched_and_errors_reported() {
        let x = row(&[2.5; 10]);
        for beta in DEFAULT_BETA_GRID {
            assert_eq!(filter_trajectory(&x, &FilterParams::new(beta, 0.001).unwrap()).unwrap(), x);
        }
        assert!(FilterParams::new(-1.0, 0.1).is_err());
        assert!(FilterParams::new(1.0, 0.0).is_err());
        let empty = Tensor::new(vec![1, 0], vec![]).unwrap();
        assert!(filter_trajectory(&empty, &FilterParams::new(1.0, 0.1).unwrap()).is_err());
        let mut s = FilterState::default();
        assert!(filter_step(f64::INFINITY, &mut s, &FilterParams::new(1.0, 0.1).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn alpha_in_unit_interval_and_increasing_in_beta(step in 1e-6f64..100.0, b in 0.0f64..50.0, db in 1e-3f64..10.0) {
            let lo = FilterParams::new(b, 0.0005).unwrap().alpha(step);
            let hi = FilterParams::new(b + db, 0.0005).unwrap().alpha(step);
            prop_assert!((0.0..1.0).contains(&lo));
            prop_assert!(hi > lo);
        }

        #[test]
        fn output_stays_within_prefix_range(xs in proptest::collection::vec(-100.0f64..100.0, 1..60), beta in 0.0f64..20.0) {
            let out = filter_trajectory(&row(&xs), &FilterParams::new(beta, 0.01).unwrap()).unwrap();
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (x, y) in xs.iter().zip(out.data()) {
                lo = lo.min(*x);
                hi = hi.max(*x);
                prop_assert!(*y >= lo - 1e-12 && *y <= hi + 1e-12);
            }
        }

        #[test]
        fn prefix_truncation_is_causal(xs in proptest::collection::vec(-50.0f64..50.0, 2..60), cut in 1usize..60, beta in 0.0f64..5.0) {
            let cut = cut.min(xs.len());
            let p = FilterParams::new(beta, 0.005).unwrap();
            let full = filter_trajectory(&row(&xs), &p).unwrap();
            let pre = filter_trajectory(&row(&xs[..cut]), &p).unwrap();
            prop_assert_eq!(&full.data()[..cut], pre.data());
        }

        #[test]
        fn mean_speed_monotone_over_grid(xs in proptest::collection::vec(-30.0f64..30.0, 3..80)) {
            let traj = row(&xs);
            let sweep = beta_sweep(std::slice::from_ref(&traj), &DEFAULT_BETA_GRID, 0.02).unwrap();
            let speeds: Vec<f64> = sweep.iter().map(|(_, t)| mean_speed(&t[0], 50.0).unwrap()).collect();
            for w in speeds.windows(2) {
                prop_assert!(w[0] <= w[1] + 1e-9, "{:?}", speeds);
            }
        }
    }
}
