//! The experiment stages. Each reads its prerequisites from the output
//! directory, fails with the expected path when one is missing, and
//! rewrites its own outputs atomically.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use emgpose::analysis::{
    aggregate, angular_error, landmark_error, mean_speed, per_timestep_error, residual_spectrum, spectrum_diff, static_regression,
    static_tracking, training_medians, MetricsRecord,
};
use emgpose::autodiff::Tensor;
use emgpose::data::{generate_corpus, read_session, split, windows, write_session, Condition, Session, SplitConfig, Splits, SyntheticConfig, Window};
use emgpose::filtering::{filter_trajectory, FilterParams};
use emgpose::kinematics::HandModel;
use emgpose::model::{ModelConfig, ModelParams, RolloutSpec, Task};
use emgpose::training::{self, EpochRecord, TrainReport};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ExperimentConfig, ModelVariant};
use crate::error::{CliError, CliResult};
use crate::output::{num, read_json, write_json, Table};

const MANIFEST_VERSION: u32 = 1;
/// Reports show spectra up to this frequency; raw files keep every bin.
pub const REPORT_MAX_HZ: f64 = 25.0;
pub const STATIC_MODEL: &str = "static";
/// Condition label for held-in validation rows.
pub const VAL_CONDITION: &str = "val";

/// Layout of an experiment's output directory.
#[derive(Clone, Debug)]
pub struct Paths {
    pub root: PathBuf,
}

impl Paths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("data").join("manifest.json")
    }
    pub fn session(&self, id: &str) -> PathBuf {
        self.root.join("data").join("sessions").join(format!("{id}.emgs"))
    }
    pub fn run_dir(&self, model: &str, seed: u64) -> PathBuf {
        self.root.join("runs").join(model).join(format!("seed{seed}"))
    }
    pub fn checkpoint(&self, model: &str, seed: u64) -> PathBuf {
        self.run_dir(model, seed).join("checkpoint.emgckpt")
    }
    pub fn epochs_csv(&self, model: &str, seed: u64) -> PathBuf {
        self.run_dir(model, seed).join("epochs.csv")
    }
    pub fn train_report(&self, model: &str, seed: u64) -> PathBuf {
        self.run_dir(model, seed).join("report.json")
    }
    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("eval").join("metrics.csv")
    }
    pub fn validation_csv(&self) -> PathBuf {
        self.root.join("eval").join("validation.csv")
    }
    pub fn frontier_csv(&self) -> PathBuf {
        self.root.join("filter").join("frontier.csv")
    }
    pub fn analyze_dir(&self, task: Task, condition: &str) -> PathBuf {
        self.root.join("analyze").join(task.as_str()).join(condition)
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

fn ensure_dir(p: &Path) -> CliResult<()> {
    fs::create_dir_all(p).map_err(CliError::io(p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub session_id: String,
    pub user_id: String,
    pub stage_id: String,
    pub file: String,
}

/// What `gen-data` produced: the corpus config, the split and the windowing
/// used downstream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub data: SyntheticConfig,
    pub data_seed: u64,
    pub split_config: SplitConfig,
    pub splits: Splits,
    pub window_s: f64,
    pub train_hop_s: f64,
    pub eval_hop_s: f64,
    pub sessions: Vec<ManifestEntry>,
}

pub fn gen_data(cfg: &ExperimentConfig) -> CliResult<Manifest> {
    let paths = Paths::new(&cfg.out_dir);
    let corpus = generate_corpus(&cfg.data, cfg.data_seed)?;
    let keys: Vec<_> = corpus.iter().map(Session::key).collect();
    let split_config = match &cfg.split {
        Some(s) => s.clone(),
        None => SplitConfig::last_of_each(&keys)?,
    };
    let splits = split(&split_config, &keys)?;
    ensure_dir(&paths.root.join("data").join("sessions"))?;
    let mut sessions = Vec::with_capacity(corpus.len());
    for s in &corpus {
        let path = paths.session(&s.session_id);
        write_session(&path, s)?;
        sessions.push(ManifestEntry {
            session_id: s.session_id.clone(),
            user_id: s.user_id.clone(),
            stage_id: s.stage_id.clone(),
            file: format!("sessions/{}.emgs", s.session_id),
        });
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        data: cfg.data.clone(),
        data_seed: cfg.data_seed,
        split_config,
        splits,
        window_s: cfg.train.window_s,
        train_hop_s: cfg.train.train_hop_s,
        eval_hop_s: cfg.train.eval_hop_s,
        sessions,
    };
    write_json(&paths.manifest(), &manifest)?;
    eprintln!("gen-data: {} sessions -> {}", corpus.len(), paths.root.join("data").display());
    Ok(manifest)
}

/// Sessions of one split, windowed.
pub struct Data {
    paths: Paths,
    pub manifest: Manifest,
}

impl Data {
    pub fn open(cfg: &ExperimentConfig) -> CliResult<Self> {
        let paths = Paths::new(&cfg.out_dir);
        let manifest: Manifest = read_json(&paths.manifest(), "run `emgpose gen-data` with this config first")?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(CliError::Config(format!("manifest version {} is not supported", manifest.format_version)));
        }
        if manifest.data != cfg.data || manifest.data_seed != cfg.data_seed {
            return Err(CliError::Config(format!(
                "{} was generated from a different data config; rerun gen-data",
                paths.manifest().display()
            )));
        }
        if manifest.window_s != cfg.train.window_s || manifest.train_hop_s != cfg.train.train_hop_s || manifest.eval_hop_s != cfg.train.eval_hop_s {
            return Err(CliError::Config("window or hop changed since gen-data; rerun gen-data".into()));
        }
        Ok(Self { paths, manifest })
    }

    fn load(&self, ids: &[String]) -> CliResult<Vec<Session>> {
        ids.iter()
            .map(|id| {
                let p = self.paths.session(id);
                if !p.exists() {
                    return Err(CliError::missing(&p, "session listed in the manifest; rerun `emgpose gen-data`"));
                }
                Ok(read_session(&p)?)
            })
            .collect()
    }

    fn windowed(&self, ids: &[String], hop: f64) -> CliResult<Vec<Window>> {
        let mut out = Vec::new();
        for s in self.load(ids)? {
            out.extend(windows(&s, self.manifest.window_s, hop)?);
        }
        Ok(out)
    }

    pub fn train_windows(&self) -> CliResult<Vec<Window>> {
        self.windowed(&self.manifest.splits.train, self.manifest.train_hop_s)
    }

    pub fn val_windows(&self) -> CliResult<Vec<Window>> {
        self.windowed(&self.manifest.splits.val, self.manifest.eval_hop_s)
    }

    pub fn test_windows(&self, c: Condition) -> CliResult<Vec<Window>> {
        self.windowed(self.manifest.splits.test(c), self.manifest.eval_hop_s)
    }

    /// Per-joint medians of the training poses, for the Regression baseline.
    pub fn train_medians(&self) -> CliResult<Vec<f64>> {
        let sessions = self.load(&self.manifest.splits.train)?;
        Ok(training_medians(sessions.iter().map(|s| (&s.joint_angles, s.valid_mask.as_slice())))?)
    }

    /// Held-in validation first, then the three test conditions.
    pub fn eval_sets(&self) -> CliResult<Vec<(String, Vec<Window>)>> {
        let mut sets = vec![(VAL_CONDITION.to_string(), self.val_windows()?)];
        for c in Condition::ALL {
            sets.push((c.as_str().to_string(), self.test_windows(c)?));
        }
        Ok(sets)
    }
}

fn seeds_or<'a>(cfg: &'a ExperimentConfig, seeds: &'a [u64]) -> &'a [u64] {
    if seeds.is_empty() {
        &cfg.seeds
    } else {
        seeds
    }
}

pub fn train(cfg: &ExperimentConfig, seeds: &[u64]) -> CliResult<Vec<TrainReport>> {
    train_with_progress(cfg, seeds, &mut |id, seed, e| {
        eprintln!(
            "train {id} seed {seed}: epoch {:>3} train {:.4} val {:.4} speed {:.2} deg/s",
            e.epoch, e.train_loss, e.val_loss, e.val_mean_speed
        )
    })
}

/// Trains every variant and seed, calling `on_epoch(model_id, seed, record)`
/// after each epoch.
pub fn train_with_progress(cfg: &ExperimentConfig, seeds: &[u64], on_epoch: &mut dyn FnMut(&str, u64, &EpochRecord)) -> CliResult<Vec<TrainReport>> {
    let data = Data::open(cfg)?;
    let paths = Paths::new(&cfg.out_dir);
    let (tr, va) = (data.train_windows()?, data.val_windows()?);
    let seeds = seeds_or(cfg, seeds);
    let mut reports = Vec::new();
    for v in cfg.variants() {
        let mcfg = v.model_config(&cfg.model);
        let id = v.id();
        for &seed in seeds {
            let dir = paths.run_dir(&id, seed);
            ensure_dir(&dir)?;
            let mut progress = |e: &EpochRecord| on_epoch(&id, seed, e);
            let out = match training::train_with_progress(&mcfg, &cfg.train, v.task_mode, &tr, &va, seed, &mut progress) {
                Ok(o) => o,
                Err(e @ emgpose::Error::Divergence { .. }) => {
                    write_json(&dir.join("divergence.json"), &json!({"model": id, "seed": seed, "error": e.to_string()}))?;
                    return Err(e.into());
                }
                Err(e) => return Err(e.into()),
            };
            let r = &out.report;
            let mut t = Table::new(&["epoch", "train_loss", "val_loss", "val_mean_speed", "lr"]);
            for e in &r.epochs {
                t.push(vec![e.epoch.to_string(), num(e.train_loss), num(e.val_loss), num(e.val_mean_speed), num(e.lr)]);
            }
            let extra = json!({
                "model": id,
                "gt_mean_speed": r.gt_mean_speed,
                "collapsed": r.collapsed,
                "collapse_start": r.collapse_start,
                "best_epoch": r.best_epoch,
            });
            t.write(&paths.epochs_csv(&id, seed), "train", cfg, &[seed], extra)?;
            out.params.save(&paths.checkpoint(&id, seed), &mcfg)?;
            write_json(&paths.train_report(&id, seed), r)?;
            reports.push(out.report);
        }
    }
    Ok(reports)
}

/// A trained model ready for inference.
pub struct Trained {
    pub variant: ModelVariant,
    pub seed: u64,
    pub cfg: ModelConfig,
    pub params: ModelParams,
}

impl Trained {
    pub fn tasks(&self) -> Vec<Task> {
        if self.cfg.regression {
            vec![Task::Tracking, Task::Regression]
        } else {
            vec![Task::Tracking]
        }
    }

    pub fn predict(&self, w: &Window, task: Task) -> CliResult<Tensor> {
        let spec = RolloutSpec::new(task, self.cfg.output_param);
        Ok(self.params.predict_window(&self.cfg, &w.emg, Some(&w.y0), &spec)?)
    }
}

pub fn load_models(cfg: &ExperimentConfig, seeds: &[u64]) -> CliResult<Vec<Trained>> {
    let paths = Paths::new(&cfg.out_dir);
    let mut out = Vec::new();
    for variant in cfg.variants() {
        let expect = variant.model_config(&cfg.model);
        for &seed in seeds_or(cfg, seeds) {
            let p = paths.checkpoint(&variant.id(), seed);
            if !p.exists() {
                return Err(CliError::missing(&p, "run `emgpose train` with this config and seed first"));
            }
            let (mcfg, params) = ModelParams::load(&p)?;
            if mcfg != expect {
                return Err(CliError::Config(format!("{} was trained with a different model config; retrain", p.display())));
            }
            out.push(Trained { variant, seed, cfg: mcfg, params });
        }
    }
    Ok(out)
}

/// Per-window quantities every later stage needs.
struct Scored {
    ae: f64,
    ld: f64,
    speed: f64,
}

fn score(hand: &HandModel, pred: &Tensor, w: &Window, rate: f64) -> CliResult<Scored> {
    Ok(Scored {
        ae: angular_error(pred, &w.pose, &w.mask)?,
        ld: landmark_error(hand, pred, &w.pose, &w.mask)?,
        speed: mean_speed(pred, rate)?,
    })
}

fn static_prediction(task: Task, w: &Window, medians: &[f64]) -> CliResult<Tensor> {
    Ok(match task {
        Task::Tracking => static_tracking(&w.y0, w.len())?,
        Task::Regression => static_regression(Some(medians), w.len())?,
    })
}

/// One row per (model, seed, user, condition, task).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub seed: u64,
    pub user: String,
    pub condition: String,
    pub task: Task,
    #[serde(rename = "AE_deg")]
    pub ae_deg: f64,
    #[serde(rename = "LD_mm")]
    pub ld_mm: f64,
    pub mean_speed_dps: f64,
}

const METRIC_COLUMNS: [&str; 8] = ["model", "seed", "user", "condition", "task", "AE_deg", "LD_mm", "mean_speed_dps"];

/// Averages window scores per user.
fn per_user(model: &str, seed: u64, condition: &str, task: Task, scored: &[(String, Scored)]) -> Vec<MetricsRow> {
    let mut by_user: BTreeMap<&str, Vec<&Scored>> = BTreeMap::new();
    for (u, s) in scored {
        by_user.entry(u).or_default().push(s);
    }
    by_user
        .into_iter()
        .map(|(u, v)| {
            let n = v.len() as f64;
            MetricsRow {
                model: model.to_string(),
                seed,
                user: u.to_string(),
                condition: condition.to_string(),
                task,
                ae_deg: v.iter().map(|s| s.ae).sum::<f64>() / n,
                ld_mm: v.iter().map(|s| s.ld).sum::<f64>() / n,
                mean_speed_dps: v.iter().map(|s| s.speed).sum::<f64>() / n,
            }
        })
        .collect()
}

fn metrics_table(rows: &[MetricsRow]) -> Table {
    let mut t = Table::new(&METRIC_COLUMNS);
    for r in rows {
        t.push(vec![
            r.model.clone(),
            r.seed.to_string(),
            r.user.clone(),
            r.condition.clone(),
            r.task.as_str().to_string(),
            num(r.ae_deg),
            num(r.ld_mm),
            num(r.mean_speed_dps),
        ]);
    }
    t
}

fn needs_regression(models: &[Trained]) -> bool {
    models.iter().any(|m| m.cfg.regression)
}

/// Metrics for every model, seed and condition plus the static baselines;
/// returns (test rows, validation rows).
pub fn eval(cfg: &ExperimentConfig, seeds: &[u64]) -> CliResult<(Vec<MetricsRow>, Vec<MetricsRow>)> {
    let data = Data::open(cfg)?;
    let models = load_models(cfg, seeds)?;
    let paths = Paths::new(&cfg.out_dir);
    let hand = HandModel::canonical();
    let rate = cfg.data.sample_rate_hz;
    let medians = if needs_regression(&models) { data.train_medians()? } else { Vec::new() };
    let (mut test, mut val) = (Vec::new(), Vec::new());
    for (condition, ws) in data.eval_sets()? {
        let sink = if condition == VAL_CONDITION { &mut val } else { &mut test };
        for m in &models {
            for task in m.tasks() {
                let scored = ws
                    .iter()
                    .map(|w| Ok((w.user_id.clone(), score(&hand, &m.predict(w, task)?, w, rate)?)))
                    .collect::<CliResult<Vec<_>>>()?;
                sink.extend(per_user(&m.variant.id(), m.seed, &condition, task, &scored));
            }
        }
        let mut tasks = vec![Task::Tracking];
        if needs_regression(&models) {
            tasks.push(Task::Regression);
        }
        for task in tasks {
            let scored = ws
                .iter()
                .map(|w| Ok((w.user_id.clone(), score(&hand, &static_prediction(task, w, &medians)?, w, rate)?)))
                .collect::<CliResult<Vec<_>>>()?;
            sink.extend(per_user(STATIC_MODEL, 0, &condition, task, &scored));
        }
        eprintln!("eval: {condition} done ({} windows)", ws.len());
    }
    ensure_dir(&paths.root.join("eval"))?;
    let seeds = seeds_or(cfg, seeds).to_vec();
    let extra = json!({"static_seed_note": "static baselines are seed-independent and reported once with seed 0"});
    metrics_table(&test).write(&paths.metrics_csv(), "eval", cfg, &seeds, extra.clone())?;
    metrics_table(&val).write(&paths.validation_csv(), "eval", cfg, &seeds, extra)?;
    Ok((test, val))
}

/// Smoothness-accuracy frontier: every model, condition and task at each
/// beta, plus one unfiltered row. Values are means over windows and seeds.
pub fn filter_sweep(cfg: &ExperimentConfig, seeds: &[u64], betas: &[f64], te: Option<f64>) -> CliResult<Table> {
    let data = Data::open(cfg)?;
    let models = load_models(cfg, seeds)?;
    let paths = Paths::new(&cfg.out_dir);
    let betas = if betas.is_empty() { cfg.betas.clone() } else { betas.to_vec() };
    let te = te.unwrap_or_else(|| cfg.filter_te());
    let params = betas.iter().map(|&b| FilterParams::new(b, te)).collect::<emgpose::Result<Vec<_>>>()?;
    let hand = HandModel::canonical();
    let rate = cfg.data.sample_rate_hz;
    let mut t = Table::new(&["model", "condition", "task", "beta", "unfiltered", "mean_speed_dps", "AE_deg", "LD_mm"]);
    for (condition, ws) in data.eval_sets()? {
        for variant in cfg.variants() {
            let group: Vec<&Trained> = models.iter().filter(|m| m.variant == variant).collect();
            for task in group[0].tasks() {
                // acc[0] is unfiltered, acc[1 + i] is betas[i].
                let mut acc = vec![(0.0, 0.0, 0.0); betas.len() + 1];
                let mut n = 0.0;
                for m in &group {
                    for w in &ws {
                        let pred = m.predict(w, task)?;
                        let s = score(&hand, &pred, w, rate)?;
                        acc[0].0 += s.speed;
                        acc[0].1 += s.ae;
                        acc[0].2 += s.ld;
                        for (i, p) in params.iter().enumerate() {
                            let s = score(&hand, &filter_trajectory(&pred, p)?, w, rate)?;
                            acc[i + 1].0 += s.speed;
                            acc[i + 1].1 += s.ae;
                            acc[i + 1].2 += s.ld;
                        }
                        n += 1.0;
                    }
                }
                for (i, (sp, ae, ld)) in acc.iter().enumerate() {
                    let (beta, unfiltered) = if i == 0 { (String::new(), "true") } else { (num(betas[i - 1]), "false") };
                    t.push(vec![
                        variant.id(),
                        condition.clone(),
                        task.as_str().to_string(),
                        beta,
                        unfiltered.to_string(),
                        num(sp / n),
                        num(ae / n),
                        num(ld / n),
                    ]);
                }
            }
        }
        eprintln!("filter-sweep: {condition} done");
    }
    ensure_dir(&paths.root.join("filter"))?;
    let seeds = seeds_or(cfg, seeds).to_vec();
    t.write(&paths.frontier_csv(), "filter-sweep", cfg, &seeds, json!({"betas": betas, "te_s": te}))?;
    Ok(t)
}

/// Per-timestep error curves, residual spectra and pairwise spectrum
/// differences, per task and condition. Seeds are pooled.
pub fn analyze(cfg: &ExperimentConfig, seeds: &[u64]) -> CliResult<Vec<PathBuf>> {
    let data = Data::open(cfg)?;
    let models = load_models(cfg, seeds)?;
    let paths = Paths::new(&cfg.out_dir);
    let rate = cfg.data.sample_rate_hz;
    let medians = if needs_regression(&models) { data.train_medians()? } else { Vec::new() };
    let seeds = seeds_or(cfg, seeds).to_vec();
    let mut written = Vec::new();
    let mut tasks = vec![Task::Tracking];
    if needs_regression(&models) {
        tasks.push(Task::Regression);
    }
    for (condition, ws) in data.eval_sets()? {
        let gts: Vec<Tensor> = ws.iter().map(|w| w.pose.clone()).collect();
        let masks: Vec<Vec<bool>> = ws.iter().map(|w| w.mask.clone()).collect();
        for &task in &tasks {
            let dir = paths.analyze_dir(task, &condition);
            ensure_dir(&dir)?;
            // Static baseline first, then the variants able to run this task.
            let mut entries: Vec<(String, Vec<Tensor>, Vec<Tensor>, Vec<Vec<bool>>)> = Vec::new();
            let preds = ws.iter().map(|w| static_prediction(task, w, &medians)).collect::<CliResult<Vec<_>>>()?;
            entries.push((STATIC_MODEL.to_string(), preds, gts.clone(), masks.clone()));
            for variant in cfg.variants() {
                let group: Vec<&Trained> = models.iter().filter(|m| m.variant == variant && m.tasks().contains(&task)).collect();
                if group.is_empty() {
                    continue;
                }
                let (mut p, mut g, mut k) = (Vec::new(), Vec::new(), Vec::new());
                for m in group {
                    for w in &ws {
                        p.push(m.predict(w, task)?);
                        g.push(w.pose.clone());
                        k.push(w.mask.clone());
                    }
                }
                entries.push((variant.id(), p, g, k));
            }
            let extra = json!({"task": task, "condition": condition});
            let mut spectra = Vec::new();
            for (id, p, g, k) in &entries {
                let curve = per_timestep_error(p, g, k)?;
                let mut t = Table::new(&["t_index", "mean_AE"]);
                for (i, v) in curve.mean_ae.iter().enumerate() {
                    t.push(vec![i.to_string(), num(*v)]);
                }
                let path = dir.join(format!("curve_{id}.csv"));
                t.write(&path, "analyze", cfg, &seeds, extra.clone())?;
                written.push(path);

                let spec = residual_spectrum(p, g, k, rate)?;
                let mut t = Table::new(&["freq_hz", "mag"]);
                for (f, m) in spec.freqs_hz.iter().zip(&spec.magnitude) {
                    t.push(vec![num(*f), num(*m)]);
                }
                let path = dir.join(format!("spectrum_{id}.csv"));
                t.write(&path, "analyze", cfg, &seeds, extra.clone())?;
                written.push(path);
                spectra.push((id.clone(), spec));
            }
            for i in 0..spectra.len() {
                for j in i + 1..spectra.len() {
                    let (a, sa) = &spectra[i];
                    let (b, sb) = &spectra[j];
                    let d = spectrum_diff(sa, sb)?;
                    let mut t = Table::new(&["freq_hz", "mag"]);
                    for (f, m) in sa.freqs_hz.iter().zip(&d) {
                        t.push(vec![num(*f), num(*m)]);
                    }
                    let path = dir.join(format!("diff_{a}__{b}.csv"));
                    let extra = json!({"task": task, "condition": condition, "a": a, "b": b,
                        "sign": "positive values mean the second model has lower residual magnitude"});
                    t.write(&path, "analyze", cfg, &seeds, extra)?;
                    written.push(path);
                }
            }
        }
        eprintln!("analyze: {condition} done");
    }
    Ok(written)
}

fn read_metrics(path: &Path) -> CliResult<Vec<MetricsRow>> {
    if !path.exists() {
        return Err(CliError::missing(path, "run `emgpose eval` first"));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?)
}

/// Summary table (mean and sd across users of per-user seed
/// means), training outcomes, and spectrum differences truncated for display.
pub fn report(cfg: &ExperimentConfig, seeds: &[u64]) -> CliResult<PathBuf> {
    let paths = Paths::new(&cfg.out_dir);
    let seeds = seeds_or(cfg, seeds).to_vec();
    let dir = paths.report_dir();
    ensure_dir(&dir)?;

    let test = read_metrics(&paths.metrics_csv())?;
    let val = read_metrics(&paths.validation_csv())?;
    let to_records = |rows: &[MetricsRow], as_condition: Option<Condition>| -> CliResult<Vec<MetricsRecord>> {
        rows.iter()
            .map(|r| {
                let condition = match as_condition {
                    Some(c) => c,
                    None => r.condition.parse()?,
                };
                Ok(MetricsRecord {
                    model: r.model.clone(),
                    seed: r.seed,
                    user: r.user.clone(),
                    condition,
                    task: r.task,
                    ae_deg: r.ae_deg,
                    ld_mm: r.ld_mm,
                    mean_speed_dps: r.mean_speed_dps,
                })
            })
            .collect()
    };
    let mut summary = Table::new(&[
        "model", "condition", "task", "n_users", "AE_mean", "AE_sd", "LD_mean", "LD_sd", "speed_mean", "speed_sd", "sd_undefined",
    ]);
    let mut md = String::from("# Results\n\nMean +- sd across users of per-user means over seeds.\n");
    // Validation rows share one label; aggregate them under a placeholder
    // condition and relabel.
    let groups = [(VAL_CONDITION, aggregate(&to_records(&val, Some(Condition::UserStage))?)?), ("", aggregate(&to_records(&test, None)?)?)];
    for task in [Task::Tracking, Task::Regression] {
        let mut section = String::new();
        for (label, rows) in &groups {
            for r in rows.iter().filter(|r| r.task == task) {
                let condition = if label.is_empty() { r.condition.as_str() } else { label };
                summary.push(vec![
                    r.model.clone(),
                    condition.to_string(),
                    task.as_str().to_string(),
                    r.n_users.to_string(),
                    num(r.ae_mean),
                    num(r.ae_sd),
                    num(r.ld_mean),
                    num(r.ld_sd),
                    num(r.speed_mean),
                    num(r.speed_sd),
                    r.sd_undefined.to_string(),
                ]);
                let pm = |m: f64, sd: f64, p: usize| if r.sd_undefined { format!("{m:.p$} (n=1)") } else { format!("{m:.p$} +- {sd:.p$}") };
                section.push_str(&format!(
                    "| {} | {} | {} | {} | {} |\n",
                    r.model,
                    condition,
                    pm(r.ae_mean, r.ae_sd, 2),
                    pm(r.ld_mean, r.ld_sd, 2),
                    pm(r.speed_mean, r.speed_sd, 1)
                ));
            }
        }
        if !section.is_empty() {
            md.push_str(&format!(
                "\n## {task}\n\n| model | condition | AE (deg) | LD (mm) | speed (deg/s) |\n|---|---|---|---|---|\n{section}"
            ));
        }
    }
    summary.write(&dir.join("summary.csv"), "report", cfg, &seeds, json!({"aggregation": "seeds then users, sample sd"}))?;

    let mut training = Table::new(&["model", "seed", "epochs", "best_epoch", "final_val_loss", "final_speed_ratio", "collapsed", "collapse_start"]);
    md.push_str("\n## Training\n\n| model | seed | final speed / GT | collapsed |\n|---|---|---|---|\n");
    for v in cfg.variants() {
        for &seed in &seeds {
            let r: TrainReport = read_json(&paths.train_report(&v.id(), seed), "run `emgpose train` first")?;
            let last = r.epochs.last().map_or(f64::NAN, |e| e.val_loss);
            training.push(vec![
                v.id(),
                seed.to_string(),
                r.epochs.len().to_string(),
                r.best_epoch.to_string(),
                num(last),
                num(r.final_speed_ratio()),
                r.collapsed.to_string(),
                r.collapse_start.map_or(String::new(), |e| e.to_string()),
            ]);
            md.push_str(&format!("| {} | {seed} | {:.3} | {} |\n", v.id(), r.final_speed_ratio(), r.collapsed));
        }
    }
    training.write(&dir.join("training.csv"), "report", cfg, &seeds, json!({}))?;

    let mut diffs = Table::new(&["task", "condition", "model_a", "model_b", "freq_hz", "mag"]);
    let analyze_root = paths.root.join("analyze");
    if !analyze_root.exists() {
        return Err(CliError::missing(&analyze_root, "run `emgpose analyze` first"));
    }
    let mut files: Vec<(Task, String, PathBuf)> = Vec::new();
    for task in [Task::Tracking, Task::Regression] {
        for condition in std::iter::once(VAL_CONDITION).chain(Condition::ALL.iter().map(|c| c.as_str())) {
            let d = paths.analyze_dir(task, condition);
            let Ok(entries) = fs::read_dir(&d) else { continue };
            let mut names: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
            names.sort();
            for p in names {
                let is_diff = p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("diff_") && n.ends_with(".csv"));
                if is_diff {
                    files.push((task, condition.to_string(), p));
                }
            }
        }
    }
    for (task, condition, p) in files {
        let side: crate::output::Sidecar = read_json(&crate::output::sidecar_path(&p), "rerun `emgpose analyze`")?;
        let (a, b) = (side.extra["a"].as_str().unwrap_or_default().to_string(), side.extra["b"].as_str().unwrap_or_default().to_string());
        let mut r = csv::Reader::from_path(&p)?;
        for rec in r.records() {
            let rec = rec?;
            let f: f64 = rec[0].parse().map_err(|_| CliError::Config(format!("bad frequency in {}", p.display())))?;
            if f > 0.0 && f <= REPORT_MAX_HZ {
                diffs.push(vec![task.as_str().to_string(), condition.clone(), a.clone(), b.clone(), rec[0].to_string(), rec[1].to_string()]);
            }
        }
    }
    diffs.write(&dir.join("spectrum_diffs.csv"), "report", cfg, &seeds, json!({"max_hz": REPORT_MAX_HZ}))?;
    emgpose::data::write_atomic(&dir.join("summary.md"), md.as_bytes())?;
    Ok(dir)
}
