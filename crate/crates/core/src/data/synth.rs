use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::session::Session;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Rollout rate the trajectory bandwidth has to stay under (Nyquist of 50 Hz).
const ROLLOUT_NYQUIST_HZ: f64 = 25.0;

/// Parameters of the synthetic recording corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_stages: usize,
    pub sessions_per_pair: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub joints: usize,
    pub channels: usize,
    /// Sinusoids summed per joint.
    pub components: usize,
    /// Centre of stage 0's frequency band; stage `s` is centred at
    /// `base * (1 + spacing * s)`.
    pub stage_base_freq_hz: f64,
    pub stage_freq_spacing: f64,
    /// Half-width of each band relative to its centre.
    pub stage_band_rel_width: f64,
    /// Per-sinusoid amplitude range, degrees.
    pub amplitude_range_deg: (f64, f64),
    /// Standard deviation of the second-order filtered noise, degrees.
    pub noise_deg: f64,
    pub noise_cutoff_hz: f64,
    pub joint_limits_deg: (f64, f64),
    /// Envelope weight on joint speed, per deg/s.
    pub emg_speed_gain: f64,
    /// Envelope weight on joint angle, per degree.
    pub emg_angle_gain: f64,
    pub emg_sensor_noise: f64,
    pub mixing_seed: u64,
    pub stage_seed: u64,
    /// Expected fraction of masked samples.
    pub mask_dropout_rate: f64,
    pub mask_burst_len: usize,
}

impl SyntheticConfig {
    /// Corpus used by the default desk-scale experiments.
    pub fn desk() -> Self {
        Self {
            n_users: 4,
            n_stages: 4,
            sessions_per_pair: 2,
            duration_s: 30.0,
            sample_rate_hz: 2000.0,
            joints: 8,
            channels: 8,
            components: 3,
            stage_base_freq_hz: 0.35,
            stage_freq_spacing: 0.8,
            stage_band_rel_width: 0.15,
            amplitude_range_deg: (4.0, 12.0),
            noise_deg: 1.5,
            noise_cutoff_hz: 2.0,
            joint_limits_deg: (-15.0, 95.0),
            emg_speed_gain: 0.01,
            emg_angle_gain: 0.1,
            emg_sensor_noise: 0.02,
            mixing_seed: 17,
            stage_seed: 29,
            mask_dropout_rate: 0.02,
            mask_burst_len: 200,
        }
    }

    /// Small corpus for smoke runs and tests.
    pub fn tiny() -> Self {
        Self {
            n_users: 3,
            n_stages: 3,
            sessions_per_pair: 2,
            duration_s: 20.0,
            joints: 4,
            channels: 4,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic config: {m}")));
        if self.n_users == 0 || self.n_stages == 0 || self.sessions_per_pair == 0 {
            return bad("user, stage and session counts must be positive");
        }
        if self.joints == 0 || self.channels == 0 || self.components == 0 {
            return bad("joint, channel and component counts must be positive");
        }
        if !(self.duration_s > 0.0) || !(self.sample_rate_hz > 0.0) {
            return bad("duration and sample rate must be positive");
        }
        if self.joint_limits_deg.0 >= self.joint_limits_deg.1 {
            return bad("joint limits must satisfy lo < hi");
        }
        if self.amplitude_range_deg.0 < 0.0 || self.amplitude_range_deg.0 > self.amplitude_range_deg.1 {
            return bad("amplitude range must satisfy 0 <= lo <= hi");
        }
        if !(0.0..1.0).contains(&self.mask_dropout_rate) || self.mask_burst_len == 0 {
            return bad("mask dropout rate must be in [0, 1) with a positive burst length");
        }
        let top = self.stage_center_hz(self.n_stages - 1) * (1.0 + self.stage_band_rel_width);
        if top >= ROLLOUT_NYQUIST_HZ || self.noise_cutoff_hz >= ROLLOUT_NYQUIST_HZ {
            return bad("trajectory bandwidth must stay below 25 Hz");
        }
        if self.stage_base_freq_hz <= 0.0 || self.stage_band_rel_width < 0.0 || self.stage_band_rel_width >= 1.0 {
            return bad("stage frequency band must be positive");
        }
        Ok(())
    }

    pub fn stage_center_hz(&self, stage: usize) -> f64 {
        self.stage_base_freq_hz * (1.0 + self.stage_freq_spacing * stage as f64)
    }

    pub fn samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }
}

pub fn user_id(user: usize) -> String {
    format!("user{user:02}")
}

pub fn stage_id(stage: usize) -> String {
    format!("stage{stage:02}")
}

/// 64-bit mix of several integers; stable across platforms and releases.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in p.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 { x } else { x.exp().ln_1p() }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// One recording. Joint trajectories are sums of sinusoids in the stage's
/// band plus low-passed noise, clipped to the joint limits. EMG is white
/// noise modulated by `softplus(M_user (a |dq/dt| + b q))`.
pub fn generate_session(cfg: &SyntheticConfig, user: usize, stage: usize, session: usize, seed: u64) -> Result<Session> {
    cfg.validate()?;
    let n = cfg.samples();
    let rate = cfg.sample_rate_hz;
    let (j, c) = (cfg.joints, cfg.channels);
    let (lo, hi) = cfg.joint_limits_deg;

    // Stage: band and per-joint resting angle, shared across users.
    let mut stage_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.stage_seed, stage as u64]));
    let span = hi - lo;
    let centers: Vec<f64> = (0..j).map(|_| lo + span * stage_rng.random_range(0.3..0.6)).collect();
    let fc = cfg.stage_center_hz(stage);
    let (flo, fhi) = (fc * (1.0 - cfg.stage_band_rel_width), fc * (1.0 + cfg.stage_band_rel_width));

    // User: channel mixing matrix.
    let mut user_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.mixing_seed, user as u64]));
    let mix: Vec<f64> = (0..c * j).map(|_| normal(&mut user_rng) / (j as f64).sqrt()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, user as u64, stage as u64, session as u64]));
    let (alo, ahi) = cfg.amplitude_range_deg;
    let mut q = vec![0.0; j * n];
    let dt = 1.0 / rate;
    // Two cascaded one-pole low-pass sections.
    let k = 1.0 - (-2.0 * std::f64::consts::PI * cfg.noise_cutoff_hz * dt).exp();
    for r in 0..j {
        let comps: Vec<(f64, f64, f64)> = (0..cfg.components)
            .map(|_| {
                let f = if fhi > flo { rng.random_range(flo..fhi) } else { flo };
                let a = if ahi > alo { rng.random_range(alo..ahi) } else { alo };
                let ph = rng.random_range(0.0..std::f64::consts::TAU);
                (f, a, ph)
            })
            .collect();
        let mut noise = vec![0.0; n];
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in noise.iter_mut() {
            s1 += k * (normal(&mut rng) - s1);
            s2 += k * (s1 - s2);
            *v = s2;
        }
        let sd = (noise.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        let gain = if sd > 0.0 && ahi > 0.0 { cfg.noise_deg / sd } else { 0.0 };
        let row = &mut q[r * n..(r + 1) * n];
        for (t, v) in row.iter_mut().enumerate() {
            let time = t as f64 * dt;
            let s: f64 = comps.iter().map(|(f, a, ph)| a * (std::f64::consts::TAU * f * time + ph).sin()).sum();
            *v = (centers[r] + s + gain * noise[t]).clamp(lo, hi);
        }
    }

    let mut emg = vec![0.0; c * n];
    let mut drive = vec![0.0; j];
    for t in 0..n {
        for (r, d) in drive.iter_mut().enumerate() {
            let cur = q[r * n + t];
            let prev = if t > 0 { q[r * n + t - 1] } else { cur };
            *d = cfg.emg_speed_gain * ((cur - prev) * rate).abs() + cfg.emg_angle_gain * cur;
        }
        for ch in 0..c {
            let x: f64 = (0..j).map(|r| mix[ch * j + r] * drive[r]).sum();
            emg[ch * n + t] = softplus(x) * normal(&mut rng) + cfg.emg_sensor_noise * normal(&mut rng);
        }
    }

    let mut mask = vec![true; n];
    if cfg.mask_dropout_rate > 0.0 {
        let p_start = cfg.mask_dropout_rate / cfg.mask_burst_len as f64;
        let mut t = 0;
        while t < n {
            if rng.random::<f64>() < p_start {
                let end = (t + cfg.mask_burst_len).min(n);
                mask[t..end].iter_mut().for_each(|m| *m = false);
                t = end;
            } else {
                t += 1;
            }
        }
    }

    Session::new(
        format!("{}_{}_s{session:02}", user_id(user), stage_id(stage)),
        user_id(user),
        stage_id(stage),
        rate,
        Tensor::matrix(c, n, emg)?,
        Tensor::matrix(j, n, q)?,
        mask,
    )
}

/// Every session of the corpus, ordered by user, stage, session.
pub fn generate_corpus(cfg: &SyntheticConfig, seed: u64) -> Result<Vec<Session>> {
    let mut out = Vec::new();
    for u in 0..cfg.n_users {
        for s in 0..cfg.n_stages {
            for k in 0..cfg.sessions_per_pair {
                out.push(generate_session(cfg, u, s, k, seed)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig { duration_s: 6.0, ..SyntheticConfig::tiny() }
    }

    #[test]
    fn same_inputs_give_bit_identical_sessions() {
        let a = generate_session(&small(), 1, 2, 0, 5).unwrap();
        let b = generate_session(&small(), 1, 2, 0, 5).unwrap();
        assert_eq!(a, b);
        let c = generate_session(&small(), 1, 2, 0, 6).unwrap();
        assert_ne!(a.emg, c.emg);
    }

    #[test]
    fn zero_dropout_gives_full_mask() {
        let cfg = SyntheticConfig { mask_dropout_rate: 0.0, ..small() };
        assert!(generate_session(&cfg, 0, 0, 0, 1).unwrap().valid_mask.iter().all(|&m| m));
        let cfg = SyntheticConfig { mask_dropout_rate: 0.3, ..small() };
        let s = generate_session(&cfg, 0, 0, 0, 1).unwrap();
        let frac = s.valid_mask.iter().filter(|&&m| !m).count() as f64 / s.samples() as f64;
        assert!(frac > 0.05 && frac < 0.6, "{frac}");
    }

    #[test]
    fn zero_amplitude_gives_constant_trajectories_and_stationary_envelope() {
        let cfg = SyntheticConfig { amplitude_range_deg: (0.0, 0.0), ..small() };
        let s = generate_session(&cfg, 0, 1, 0, 3).unwrap();
        let (j, t) = s.joint_angles.dims2().unwrap();
        for r in 0..j {
            let row = s.joint_angles.row(r);
            assert!(row.iter().all(|&v| v == row[0]));
        }
        // Envelope is constant per channel: second-half power matches first-half power.
        let c = s.emg.dims2().unwrap().0;
        for ch in 0..c {
            let row = s.emg.row(ch);
            let p1 = row[..t / 2].iter().map(|v| v * v).sum::<f64>() / (t / 2) as f64;
            let p2 = row[t / 2..].iter().map(|v| v * v).sum::<f64>() / (t - t / 2) as f64;
            assert!((p1 / p2 - 1.0).abs() < 0.1, "channel {ch}: {p1} vs {p2}");
        }
    }

    #[test]
    fn joints_stay_in_limits() {
        let cfg = SyntheticConfig { amplitude_range_deg: (40.0, 80.0), ..small() };
        let s = generate_session(&cfg, 2, 0, 1, 9).unwrap();
        let (lo, hi) = cfg.joint_limits_deg;
        assert!(s.joint_angles.data().iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small();
        cfg.n_users = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.stage_base_freq_hz = 20.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.joint_limits_deg = (10.0, 0.0);
        assert!(generate_session(&cfg, 0, 0, 0, 0).is_err());
    }
}
