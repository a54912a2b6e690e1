use crate::autodiff::{compensated_sum, Graph, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::kinematics::{dist, pad_pose, HandModel, NUM_FINGERS};

/// Weights of the two loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_tip: f64,
    /// Every `tip_subsample`-th valid frame enters the fingertip term.
    pub tip_subsample: usize,
}

/// Loss value and its gradient with respect to `pred` (`[J, T]`, row-major).
///
/// `L = mean_{valid t, j} |pred - gt| + lambda * mean_{t in S} mean_tips ||FK(pred_t) - FK(gt_t)||`
/// where `S` is every `tip_subsample`-th valid frame.
pub fn pose_loss_with_grad(pred: &Tensor, gt: &Tensor, mask: &[bool], hand: &HandModel, w: &LossWeights) -> Result<(f64, Vec<f64>)> {
    let (j, t) = pred.dims2()?;
    if gt.shape() != pred.shape() || mask.len() != t {
        return Err(shape_err(format!("loss: pred {:?}, gt {:?}, mask {}", pred.shape(), gt.shape(), mask.len())));
    }
    if w.tip_subsample == 0 || !(w.lambda_tip >= 0.0) {
        return Err(Error::InvalidArgument("loss needs tip_subsample >= 1 and lambda_tip >= 0".into()));
    }
    let valid: Vec<usize> = (0..t).filter(|&n| mask[n]).collect();
    if valid.is_empty() {
        return Err(Error::InvalidArgument("every frame of the window is masked".into()));
    }
    let (p, g) = (pred.data(), gt.data());
    let mut grad = vec![0.0; j * t];
    let norm = 1.0 / (valid.len() * j) as f64;
    let mut terms = Vec::with_capacity(valid.len() * j);
    for r in 0..j {
        for &n in &valid {
            let d = p[r * t + n] - g[r * t + n];
            terms.push(d.abs());
            grad[r * t + n] = d.signum() * norm * (d != 0.0) as u8 as f64;
        }
    }
    let mut loss = compensated_sum(terms) * norm;

    if w.lambda_tip > 0.0 {
        let frames: Vec<usize> = valid.iter().copied().step_by(w.tip_subsample).collect();
        let scale = w.lambda_tip / (frames.len() * NUM_FINGERS) as f64;
        let mut tip_terms = Vec::with_capacity(frames.len() * NUM_FINGERS);
        let col = |x: &[f64], n: usize| -> Vec<f64> { (0..j).map(|r| x[r * t + n]).collect() };
        for &n in &frames {
            let (tp, jac) = hand.fingertip_jacobian(&pad_pose(&col(p, n))?)?;
            let tg = hand.fingertip_positions(&pad_pose(&col(g, n))?)?;
            for k in 0..NUM_FINGERS {
                let d = dist(&tp[k], &tg[k]);
                tip_terms.push(d);
                if d > 0.0 {
                    let u = [(tp[k][0] - tg[k][0]) / d, (tp[k][1] - tg[k][1]) / d, (tp[k][2] - tg[k][2]) / d];
                    for r in 0..j {
                        let dj = &jac[k][r];
                        grad[r * t + n] += scale * (u[0] * dj[0] + u[1] * dj[1] + u[2] * dj[2]);
                    }
                }
            }
        }
        loss += compensated_sum(tip_terms) * scale;
    }
    Ok((loss, grad))
}

pub fn pose_loss(pred: &Tensor, gt: &Tensor, mask: &[bool], hand: &HandModel, w: &LossWeights) -> Result<f64> {
    Ok(pose_loss_with_grad(pred, gt, mask, hand, w)?.0)
}

/// Records the loss of `pred` on `g`.
pub fn pose_loss_node(g: &mut Graph, pred: Var, gt: &Tensor, mask: &[bool], hand: &HandModel, w: &LossWeights) -> Result<Var> {
    let (value, grad) = pose_loss_with_grad(g.value(pred), gt, mask, hand, w)?;
    g.scalar_fn(pred, value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    const W0: LossWeights = LossWeights { lambda_tip: 0.0, tip_subsample: 25 };

    #[test]
    fn identical_poses_give_zero() {
        let gt = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = LossWeights { lambda_tip: 0.01, tip_subsample: 1 };
        assert_eq!(pose_loss(&gt, &gt, &[true; 3], &HandModel::canonical(), &w).unwrap(), 0.0);
    }

    #[test]
    fn unit_offset_without_tip_term_is_one() {
        let gt = Tensor::matrix(3, 4, (0..12).map(|v| v as f64).collect()).unwrap();
        let pred = Tensor::matrix(3, 4, (0..12).map(|v| v as f64 + 1.0).collect()).unwrap();
        assert_eq!(pose_loss(&pred, &gt, &[true; 4], &HandModel::canonical(), &W0).unwrap(), 1.0);
    }

    #[test]
    fn hand_summed_two_by_four_case() {
        // J=2 (thumb and index MCP flexion), T=4, frame 2 masked.
        let pred = Tensor::matrix(2, 4, vec![10.0, 0.0, 50.0, -5.0, 0.0, 30.0, -40.0, 0.0]).unwrap();
        let gt = Tensor::matrix(2, 4, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 20.0]).unwrap();
        let mask = [true, true, false, true];
        // L1 over the 6 valid entries: (10 + 0 + 5 + 0 + 30 + 20) / 6.
        let l1 = 65.0 / 6.0;
        let hand = HandModel::canonical();
        assert!((pose_loss(&pred, &gt, &mask, &hand, &W0).unwrap() - l1).abs() < 1e-12);

        // Tip term with subsample 2: valid frames 0, 1, 3 -> frames 0 and 3.
        // Frame 0: thumb MCP bent 10 deg, everything else at zero. A rigid
        // rotation of the 3-bone chain about its MCP moves the tip by
        // 2 L sin(theta / 2) with L the MCP-to-tip distance (straight chain).
        let thumb = 0.85 * 90.0;
        let index = 0.95 * 90.0;
        let chord = |len: f64, deg: f64| 2.0 * len * (deg.to_radians() / 2.0).sin();
        let f0 = chord(thumb, 10.0) / 5.0;
        // Frame 3: thumb -5 vs 0, index 0 vs 20.
        let f3 = (chord(thumb, 5.0) + chord(index, 20.0)) / 5.0;
        let w = LossWeights { lambda_tip: 0.01, tip_subsample: 2 };
        let want = l1 + 0.01 * (f0 + f3) / 2.0;
        assert!((pose_loss(&pred, &gt, &mask, &hand, &w).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn masked_frames_are_ignored_and_all_masked_is_an_error() {
        let gt = Tensor::matrix(1, 3, vec![0.0, 0.0, 0.0]).unwrap();
        let a = Tensor::matrix(1, 3, vec![1.0, 99.0, 1.0]).unwrap();
        let b = Tensor::matrix(1, 3, vec![1.0, -7.0, 1.0]).unwrap();
        let hand = HandModel::canonical();
        let w = LossWeights { lambda_tip: 0.5, tip_subsample: 1 };
        let mask = [true, false, true];
        assert_eq!(pose_loss(&a, &gt, &mask, &hand, &w).unwrap(), pose_loss(&b, &gt, &mask, &hand, &w).unwrap());
        assert!(pose_loss(&a, &gt, &[false; 3], &hand, &w).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let gt = Tensor::matrix(4, 6, (0..24).map(|v| (v as f64 * 1.7).sin() * 30.0).collect()).unwrap();
        let pred = Tensor::matrix(4, 6, (0..24).map(|v| (v as f64 * 0.9).cos() * 25.0 + 3.0).collect()).unwrap();
        let mask = vec![true, true, false, true, true, true];
        let hand = HandModel::canonical();
        let w = LossWeights { lambda_tip: 0.3, tip_subsample: 2 };
        let f = |g: &mut Graph, vars: &[Var]| pose_loss_node(g, vars[0], &gt, &mask, &hand, &w);
        let r = grad_check(f, &[pred], 1e-5, 1e-4, 1e-7).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
