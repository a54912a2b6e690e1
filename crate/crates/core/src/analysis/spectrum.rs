use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{shape_err, Error, Result};

/// Mean magnitude of residual Fourier coefficients per frequency bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSpectrum {
    /// Bin centres, `k * rate / N` for `k = 1..=N/2`.
    pub freqs_hz: Vec<f64>,
    pub magnitude: Vec<f64>,
}

impl ResidualSpectrum {
    /// Keeps bins at or below `max_hz`.
    pub fn truncated(&self, max_hz: f64) -> Self {
        let n = self.freqs_hz.iter().take_while(|&&f| f <= max_hz + 1e-12).count();
        Self { freqs_hz: self.freqs_hz[..n].to_vec(), magnitude: self.magnitude[..n].to_vec() }
    }
}

/// Residuals (`pred - gt`, zero on masked frames) are transformed per window
/// and per joint; `|X_k|` is averaged over all of them. The DC bin is dropped.
pub fn residual_spectrum(preds: &[Tensor], gts: &[Tensor], masks: &[Vec<bool>], rate_hz: f64) -> Result<ResidualSpectrum> {
    if preds.is_empty() || preds.len() != gts.len() || preds.len() != masks.len() {
        return Err(shape_err("residual spectrum needs matching non-empty pred/gt/mask lists"));
    }
    let (_, n) = preds[0].dims2()?;
    if n < 2 {
        return Err(Error::InvalidArgument("residual spectrum needs at least 2 samples".into()));
    }
    let bins = n / 2;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut acc = vec![0.0; bins];
    let mut count = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for ((p, g), m) in preds.iter().zip(gts).zip(masks) {
        let (j, t) = p.dims2()?;
        if t != n || p.shape() != g.shape() || m.len() != n {
            return Err(shape_err(format!("window of length {t} does not match {n}")));
        }
        for r in 0..j {
            for (f, b) in buf.iter_mut().enumerate() {
                let res = if m[f] { p.data()[r * n + f] - g.data()[r * n + f] } else { 0.0 };
                *b = Complex::new(res, 0.0);
            }
            fft.process(&mut buf);
            for (a, c) in acc.iter_mut().zip(&buf[1..=bins]) {
                *a += c.norm();
            }
            count += 1;
        }
    }
    Ok(ResidualSpectrum {
        freqs_hz: (1..=bins).map(|k| k as f64 * rate_hz / n as f64).collect(),
        magnitude: acc.into_iter().map(|a| a / count as f64).collect(),
    })
}

/// `a - b` per bin; positive where `b` has the smaller residual.
pub fn spectrum_diff(a: &ResidualSpectrum, b: &ResidualSpectrum) -> Result<Vec<f64>> {
    if a.freqs_hz != b.freqs_hz {
        return Err(shape_err("spectra have different bins"));
    }
    Ok(a.magnitude.iter().zip(&b.magnitude).map(|(x, y)| x - y).collect())
}
