//! Statistical properties of the synthetic corpus that make the learning
//! problem solvable and the generalization splits meaningful.

use emgpose::autodiff::Tensor;
use emgpose::data::{generate_session, split, Session, SplitConfig, SyntheticConfig};
use nalgebra::DMatrix;
use rustfft::{num_complex::Complex, FftPlanner};

const DECIMATE: usize = 40; // 2 kHz -> 50 Hz
const ENVELOPE_LEN: usize = 200; // 100 ms

/// Causal moving-average envelope of the rectified EMG, sampled at 50 Hz,
/// paired with the pose at the same instants. Masked frames are dropped.
fn features(s: &Session) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (c, t) = s.emg.dims2().unwrap();
    let j = s.joints();
    let e = s.emg.data();
    let q = s.joint_angles.data();
    let mut run = vec![0.0; c];
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for n in 0..t {
        for ch in 0..c {
            run[ch] += e[ch * t + n].abs();
            if n >= ENVELOPE_LEN {
                run[ch] -= e[ch * t + n - ENVELOPE_LEN].abs();
            }
        }
        if n >= ENVELOPE_LEN && n % DECIMATE == 0 && s.valid_mask[n] {
            let env: Vec<f64> = run.iter().map(|r| r / ENVELOPE_LEN as f64).collect();
            let mut x = vec![1.0];
            x.extend(env.iter().copied());
            x.extend(env.iter().map(|v| (v + 1e-3).ln()));
            xs.push(x);
            ys.push((0..j).map(|r| q[r * t + n]).collect());
        }
    }
    (xs, ys)
}

fn stack(sessions: &[&Session]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for s in sessions {
        let (x, y) = features(s);
        xs.extend(x);
        ys.extend(y);
    }
    let x = DMatrix::from_fn(xs.len(), xs[0].len(), |r, c| xs[r][c]);
    let y = DMatrix::from_fn(ys.len(), ys[0].len(), |r, c| ys[r][c]);
    (x, y)
}

fn ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let mut a = x.transpose() * x;
    for i in 1..a.nrows() {
        a[(i, i)] += lambda * x.nrows() as f64;
    }
    a.cholesky().expect("ridge system is positive definite").solve(&(x.transpose() * y))
}

/// Mean over joints of the coefficient of determination.
fn r2(x: &DMatrix<f64>, y: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let pred = x * w;
    let per_joint: Vec<f64> = (0..y.ncols())
        .map(|c| {
            let col = y.column(c);
            let mean = col.mean();
            let ss_tot: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
            let ss_res: f64 = col.iter().zip(pred.column(c).iter()).map(|(a, b)| (a - b).powi(2)).sum();
            1.0 - ss_res / ss_tot
        })
        .collect();
    per_joint.iter().sum::<f64>() / per_joint.len() as f64
}

fn corpus(cfg: &SyntheticConfig) -> Vec<Session> {
    emgpose::data::generate_corpus(cfg, 1).unwrap()
}

#[test]
fn envelope_ridge_regression_explains_pose_on_validation() {
    for cfg in [SyntheticConfig::desk(), SyntheticConfig::tiny()] {
        let sessions = corpus(&cfg);
        let keys: Vec<_> = sessions.iter().map(|s| s.key()).collect();
        let sp = split(&SplitConfig::last_of_each(&keys).unwrap(), &keys).unwrap();
        let pick = |ids: &[String]| -> Vec<&Session> { sessions.iter().filter(|s| ids.contains(&s.session_id)).collect() };
        let (xt, yt) = stack(&pick(&sp.train));
        let (xv, yv) = stack(&pick(&sp.val));
        let w = ridge(&xt, &yt, 1e-4);
        let score = r2(&xv, &yv, &w);
        println!("{} joints: validation R^2 = {score:.3}", cfg.joints);
        assert!(score > 0.3, "validation R^2 {score}");
    }
}

#[test]
fn mixing_is_user_specific() {
    // A per-user readout transfers worse to another user than to a fresh
    // session of the same user.
    let cfg = SyntheticConfig { duration_s: 40.0, ..SyntheticConfig::desk() };
    let a_train = generate_session(&cfg, 0, 0, 0, 3).unwrap();
    let a_test = generate_session(&cfg, 0, 0, 1, 3).unwrap();
    let b_test = generate_session(&cfg, 1, 0, 1, 3).unwrap();
    let (xt, yt) = stack(&[&a_train]);
    let w = ridge(&xt, &yt, 1e-4);
    let (xa, ya) = stack(&[&a_test]);
    let (xb, yb) = stack(&[&b_test]);
    let (same, other) = (r2(&xa, &ya, &w), r2(&xb, &yb, &w));
    assert!(same > other + 0.3, "same user {same}, other user {other}");
}

/// Frequency of the largest non-DC bin of the mean joint power spectrum.
fn peak_hz(s: &Session) -> f64 {
    let (j, t) = s.joint_angles.dims2().unwrap();
    let q = s.joint_angles.data();
    let n = t / DECIMATE;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut power = vec![0.0; n / 2 + 1];
    for r in 0..j {
        let row: Vec<f64> = (0..n).map(|k| q[r * t + k * DECIMATE]).collect();
        let mean = row.iter().sum::<f64>() / n as f64;
        let mut buf: Vec<Complex<f64>> = row.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p += c.norm_sqr();
        }
    }
    let k = (1..power.len()).max_by(|a, b| power[*a].total_cmp(&power[*b])).unwrap();
    k as f64 * 50.0 / n as f64
}

#[test]
fn stages_have_distinct_dominant_frequencies() {
    let cfg = SyntheticConfig { duration_s: 60.0, ..SyntheticConfig::desk() };
    let peaks: Vec<f64> = (0..cfg.n_stages).map(|st| peak_hz(&generate_session(&cfg, 0, st, 0, 5).unwrap())).collect();
    println!("stage peaks (Hz): {peaks:?}");
    for (st, &p) in peaks.iter().enumerate() {
        let fc = cfg.stage_center_hz(st);
        let half = fc * cfg.stage_band_rel_width + 1.0 / cfg.duration_s;
        assert!((p - fc).abs() <= half, "stage {st}: peak {p} Hz outside band around {fc}");
    }
    for w in peaks.windows(2) {
        assert!(w[1] > w[0] + 0.1, "peaks not separated: {peaks:?}");
    }
}

#[test]
fn zero_amplitude_and_noise_give_constant_pose() {
    let cfg = SyntheticConfig { amplitude_range_deg: (0.0, 0.0), noise_deg: 0.0, duration_s: 2.0, ..SyntheticConfig::tiny() };
    let s = generate_session(&cfg, 1, 1, 0, 9).unwrap();
    let (j, t) = s.joint_angles.dims2().unwrap();
    let q: &Tensor = &s.joint_angles;
    for r in 0..j {
        let row = &q.data()[r * t..(r + 1) * t];
        assert!(row.iter().all(|v| *v == row[0]));
    }
}
