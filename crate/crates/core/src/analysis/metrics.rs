use crate::autodiff::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::kinematics::{pad_pose, HandModel};

fn check_pair(pred: &Tensor, gt: &Tensor, mask: &[bool]) -> Result<(usize, usize)> {
    let (j, t) = pred.dims2()?;
    if pred.shape() != gt.shape() || mask.len() != t {
        return Err(shape_err(format!(
            "pred {:?}, gt {:?}, mask {}",
            pred.shape(),
            gt.shape(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidArgument("no valid frames".into()));
    }
    Ok((j, t))
}

/// Mean absolute joint-angle error over valid frames and all joints, degrees.
pub fn angular_error(pred: &Tensor, gt: &Tensor, mask: &[bool]) -> Result<f64> {
    let (j, t) = check_pair(pred, gt, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in 0..j {
        let (p, g) = (&pred.data()[r * t..(r + 1) * t], &gt.data()[r * t..(r + 1) * t]);
        for f in (0..t).filter(|&f| mask[f]) {
            sum += (p[f] - g[f]).abs();
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Mean landmark distance over valid frames, mm.
pub fn landmark_error(hand: &HandModel, pred: &Tensor, gt: &Tensor, mask: &[bool]) -> Result<f64> {
    let (j, t) = check_pair(pred, gt, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut pf = vec![0.0; j];
    let mut gf = vec![0.0; j];
    for f in (0..t).filter(|&f| mask[f]) {
        for r in 0..j {
            pf[r] = pred.data()[r * t + f];
            gf[r] = gt.data()[r * t + f];
        }
        sum += hand.landmark_distance(&pad_pose(&pf)?, &pad_pose(&gf)?)?;
        n += 1;
    }
    Ok(sum / n as f64)
}

/// Mean over joints and steps of `|x[t+1] - x[t]| * rate`, in units per second.
pub fn mean_speed(traj: &Tensor, rate_hz: f64) -> Result<f64> {
    let (j, t) = traj.dims2()?;
    if t < 2 {
        return Err(Error::InvalidArgument(format!("mean speed needs at least 2 samples, got {t}")));
    }
    let mut sum = 0.0;
    for r in 0..j {
        let row = &traj.data()[r * t..(r + 1) * t];
        sum += row.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>();
    }
    Ok(sum / (j * (t - 1)) as f64 * rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, data: Vec<f64>) -> Tensor {
        let cols = data.len() / rows;
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn angular_error_examples() {
        let gt = m(2, vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 2.0]);
        assert_eq!(angular_error(&gt, &gt, &[true; 4]).unwrap(), 0.0);
        let shifted = m(2, gt.data().iter().map(|v| v + 2.0).collect());
        assert_eq!(angular_error(&shifted, &gt, &[true; 4]).unwrap(), 2.0);

        // Hand-summed 2x4 case with frame 2 masked.
        let pred = m(2, vec![1.5, 2.0, 100.0, 3.0, -1.0, 1.0, -50.0, 2.5]);
        let mask = [true, true, false, true];
        // joint 0: |0.5| + 0 + |-1| ; joint 1: 0 + 1 + 0.5  -> 3.0 over 6 entries
        assert!((angular_error(&pred, &gt, &mask).unwrap() - 0.5).abs() < 1e-12);
        assert!(angular_error(&pred, &gt, &[false; 4]).is_err());
        assert!(angular_error(&pred, &gt, &[true; 3]).is_err());
    }

    #[test]
    fn mean_speed_examples() {
        assert_eq!(mean_speed(&m(1, vec![3.0; 20]), 2000.0).unwrap(), 0.0);
        let ramp = m(1, (0..100).map(|i| i as f64).collect());
        assert!((mean_speed(&ramp, 2000.0).unwrap() - 2000.0).abs() < 1e-9);

        // Triangle wave 0,1,2,1,0,1,2 on one joint and a flat joint.
        let tri = vec![0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0];
        let mut data = tri.clone();
        data.extend(vec![5.0; 7]);
        let traj = m(2, data);
        let mut brute = 0.0;
        for k in 0..6 {
            brute += (tri[k + 1] - tri[k]).abs();
        }
        brute = brute / 12.0 * 10.0;
        assert!((mean_speed(&traj, 10.0).unwrap() - brute).abs() < 1e-12);
        assert!(mean_speed(&m(1, vec![1.0]), 10.0).is_err());
    }

    #[test]
    fn landmark_error_uses_padded_pose() {
        let hand = HandModel::canonical();
        // 13 joints so the middle DIP (DOF 12) is driven directly.
        let mut pred = vec![0.0; 13 * 2];
        pred[12 * 2 + 1] = 90.0;
        let pred = m(13, pred);
        let gt = m(13, vec![0.0; 26]);
        let e = landmark_error(&hand, &pred, &gt, &[true, true]).unwrap();
        let expected = 20.0 * 2f64.sqrt() / 21.0 / 2.0;
        assert!((e - expected).abs() < 1e-12);
        assert_eq!(landmark_error(&hand, &pred, &gt, &[true, false]).unwrap(), 0.0);
    }
}
