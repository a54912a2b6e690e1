use super::*;
use crate::data::{generate_session, windows, SyntheticConfig, Window};
use crate::model::{ModelConfig, OutputParam};

fn tiny_windows(n_train: usize) -> (Vec<Window>, Vec<Window>) {
    let cfg = SyntheticConfig { duration_s: 10.0, ..SyntheticConfig::tiny() };
    let a = generate_session(&cfg, 0, 0, 0, 1).unwrap();
    let b = generate_session(&cfg, 0, 0, 1, 1).unwrap();
    let mut tr = windows(&a, 1.0, 1.0).unwrap();
    tr.truncate(n_train);
    let mut va = windows(&b, 1.0, 1.0).unwrap();
    va.truncate(2);
    (tr, va)
}

fn quick() -> TrainConfig {
    TrainConfig { epochs_total: 2, warmup_epochs: 1, batch_size: 2, tip_subsample: 5, ..TrainConfig::tiny() }
}

#[test]
fn one_epoch_is_deterministic() {
    let (tr, va) = tiny_windows(4);
    let cfg = ModelConfig::tiny();
    let tc = TrainConfig { epochs_total: 1, warmup_epochs: 0, ..quick() };
    let a = train(&cfg, &tc, TaskMode::SingleTracking, &tr, &va, 7).unwrap();
    let b = train(&cfg, &tc, TaskMode::SingleTracking, &tr, &va, 7).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.params, b.params);
    let c = train(&cfg, &tc, TaskMode::SingleTracking, &tr, &va, 8).unwrap();
    assert_ne!(a.report.epochs[0].train_loss, c.report.epochs[0].train_loss);
}

#[test]
fn multitask_with_zero_regression_weight_matches_tracking() {
    let (tr, va) = tiny_windows(4);
    for output_param in [OutputParam::Position, OutputParam::Velocity] {
        let single_cfg = ModelConfig { output_param, ..ModelConfig::tiny() };
        let multi_cfg = ModelConfig { regression: true, ..single_cfg.clone() };
        let tc = TrainConfig { w_track: 1.0, w_reg: 0.0, ..quick() };
        let s = train(&single_cfg, &tc, TaskMode::SingleTracking, &tr, &va, 3).unwrap();
        let m = train(&multi_cfg, &tc, TaskMode::Multitask, &tr, &va, 3).unwrap();
        for (a, b) in s.report.epochs.iter().zip(&m.report.epochs) {
            assert!((a.train_loss - b.train_loss).abs() <= 1e-12, "{a:?} vs {b:?}");
            assert!((a.val_loss - b.val_loss).abs() <= 1e-12, "{a:?} vs {b:?}");
        }
        for p in s.params.params() {
            assert_eq!(m.params.get(&p.name), Some(&p.value), "{}", p.name);
        }
        // A nonzero regression weight does change the trace.
        let tc = TrainConfig { w_track: 0.875, w_reg: 0.125, ..quick() };
        let m = train(&multi_cfg, &tc, TaskMode::Multitask, &tr, &va, 3).unwrap();
        assert_ne!(s.report.epochs[0].val_loss, m.report.epochs[0].val_loss);
    }
}

#[test]
fn regression_modes_need_learned_init() {
    let (tr, va) = tiny_windows(2);
    let err = train(&ModelConfig::tiny(), &quick(), TaskMode::Multitask, &tr, &va, 0);
    assert!(matches!(err, Err(crate::Error::Config(_))));
    let cfg = ModelConfig { regression: true, output_param: OutputParam::Velocity, ..ModelConfig::tiny() };
    let out = train(&cfg, &TrainConfig { epochs_total: 1, warmup_epochs: 0, ..quick() }, TaskMode::SingleRegression, &tr, &va, 0).unwrap();
    assert_eq!(out.report.epochs.len(), 1);
}

#[test]
fn collapse_flag_needs_five_consecutive_low_epochs() {
    let gt = 100.0;
    let fig1_like = [80.0, 40.0, 9.0, 8.0, 7.0, 6.0, 5.0, 5.0];
    assert_eq!(detect_collapse(&fig1_like, gt, 0.1, 5), Some(2));
    let interrupted = [9.0, 9.0, 9.0, 9.0, 11.0, 9.0, 9.0, 9.0, 9.0];
    assert_eq!(detect_collapse(&interrupted, gt, 0.1, 5), None);
    let healthy = [60.0; 10];
    assert_eq!(detect_collapse(&healthy, gt, 0.1, 5), None);
    assert_eq!(detect_collapse(&[10.0; 6], gt, 0.1, 5), None);
}

#[test]
fn divergence_is_reported_with_state() {
    let (tr, va) = tiny_windows(2);
    let tc = TrainConfig { lr_peak: 1e300, lr_start: 1e300, clip_norm: 1e300, weight_decay: 0.0, ..quick() };
    match train(&ModelConfig::tiny(), &tc, TaskMode::SingleTracking, &tr, &va, 0) {
        Err(crate::Error::Divergence { detail, .. }) => assert!(detail.contains("parameter norms")),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.report)),
    }
}
