use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Tracking baseline: the initial pose held for the whole window.
pub fn static_tracking(y0: &[f64], len: usize) -> Result<Tensor> {
    let data = y0.iter().flat_map(|&v| std::iter::repeat_n(v, len)).collect();
    Tensor::matrix(y0.len(), len, data)
}

/// Regression baseline: per-joint training-set medians held for the whole window.
pub fn static_regression(medians: Option<&[f64]>, len: usize) -> Result<Tensor> {
    let medians = medians.ok_or_else(|| Error::InvalidArgument("regression baseline needs training medians".into()))?;
    static_tracking(medians, len)
}

/// Per-joint median over the valid frames of `[J, T]` pose matrices.
pub fn training_medians<'a>(poses: impl IntoIterator<Item = (&'a Tensor, &'a [bool])>) -> Result<Vec<f64>> {
    let mut per_joint: Vec<Vec<f64>> = Vec::new();
    for (pose, mask) in poses {
        let (j, t) = pose.dims2()?;
        if per_joint.is_empty() {
            per_joint = vec![Vec::new(); j];
        } else if per_joint.len() != j {
            return Err(Error::Shape("pose matrices differ in joint count".into()));
        }
        for (r, vals) in per_joint.iter_mut().enumerate() {
            vals.extend((0..t).filter(|&f| mask[f]).map(|f| pose.data()[r * t + f]));
        }
    }
    if per_joint.is_empty() || per_joint[0].is_empty() {
        return Err(Error::InvalidArgument("no valid frames to take medians from".into()));
    }
    Ok(per_joint
        .into_iter()
        .map(|mut v| {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
        })
        .collect())
}
