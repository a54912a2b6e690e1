use crate::autodiff::Tensor;
use crate::error::{shape_err, Result};

/// Mean absolute error at each within-window sample index.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestepCurve {
    /// Zero where no window has a valid frame at that index.
    pub mean_ae: Vec<f64>,
    /// Number of (window, joint) pairs contributing at each index.
    pub counts: Vec<usize>,
}

pub fn per_timestep_error(preds: &[Tensor], gts: &[Tensor], masks: &[Vec<bool>]) -> Result<TimestepCurve> {
    if preds.len() != gts.len() || preds.len() != masks.len() {
        return Err(shape_err("per-timestep error needs one gt and mask per prediction"));
    }
    let Some(first) = preds.first() else {
        return Ok(TimestepCurve { mean_ae: Vec::new(), counts: Vec::new() });
    };
    let (_, t) = first.dims2()?;
    let mut sums = vec![0.0; t];
    let mut counts = vec![0usize; t];
    for ((p, g), m) in preds.iter().zip(gts).zip(masks) {
        let (j, tt) = p.dims2()?;
        if tt != t || p.shape() != g.shape() || m.len() != t {
            return Err(shape_err("windows must share one length"));
        }
        for r in 0..j {
            for f in (0..t).filter(|&f| m[f]) {
                sums[f] += (p.data()[r * t + f] - g.data()[r * t + f]).abs();
                counts[f] += 1;
            }
        }
    }
    let mean_ae = sums.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    Ok(TimestepCurve { mean_ae, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::static_tracking;

    #[test]
    fn static_baseline_curve_is_distance_from_initial_pose() {
        let gts: Vec<Tensor> = (0..3)
            .map(|w| {
                let data = (0..2 * 6).map(|i| ((i * (w + 2)) as f64 * 0.7).sin() * 10.0).collect();
                Tensor::matrix(2, 6, data).unwrap()
            })
            .collect();
        let masks = vec![vec![true; 6], vec![true, true, false, true, true, true], vec![true; 6]];
        let preds: Vec<Tensor> = gts.iter().map(|g| static_tracking(&[g.get2(0, 0), g.get2(1, 0)], 6).unwrap()).collect();
        let curve = per_timestep_error(&preds, &gts, &masks).unwrap();
        for f in 0..6 {
            let mut s = 0.0;
            let mut n = 0;
            for (g, m) in gts.iter().zip(&masks) {
                if m[f] {
                    for r in 0..2 {
                        s += (g.get2(r, f) - g.get2(r, 0)).abs();
                        n += 1;
                    }
                }
            }
            assert!((curve.mean_ae[f] - s / n as f64).abs() < 1e-12);
            assert_eq!(curve.counts[f], n);
        }
        assert_eq!(curve.mean_ae[0], 0.0);
    }

    #[test]
    fn constant_gt_gives_flat_zero_curve() {
        let gt = Tensor::full(vec![3, 10], 4.0);
        let curve = per_timestep_error(&[static_tracking(&[4.0; 3], 10).unwrap()], &[gt], &[vec![true; 10]]).unwrap();
        assert!(curve.mean_ae.iter().all(|&v| v == 0.0));
    }
}
