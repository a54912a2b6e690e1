use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Condition;
use crate::error::{Error, Result};
use crate::model::Task;

/// Metrics of one model seed on one user's windows under one condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub model: String,
    pub seed: u64,
    pub user: String,
    pub condition: Condition,
    pub task: Task,
    pub ae_deg: f64,
    pub ld_mm: f64,
    pub mean_speed_dps: f64,
}

/// Mean and sample standard deviation across users of per-user seed means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub condition: Condition,
    pub task: Task,
    pub n_users: usize,
    pub ae_mean: f64,
    pub ae_sd: f64,
    pub ld_mean: f64,
    pub ld_sd: f64,
    pub speed_mean: f64,
    pub speed_sd: f64,
    /// Set when only one user is present; the sd fields are then 0.
    pub sd_undefined: bool,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Two-stage aggregation: average over seeds within each user, then mean and
/// sample sd over users. Output rows are sorted by model, task, condition.
pub fn aggregate(records: &[MetricsRecord]) -> Result<Vec<AggregateRow>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no metrics records to aggregate".into()));
    }
    type Key = (String, Task, Condition);
    let mut groups: BTreeMap<Key, BTreeMap<String, Vec<&MetricsRecord>>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.model.clone(), r.task, r.condition))
            .or_default()
            .entry(r.user.clone())
            .or_default()
            .push(r);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((model, task, condition), users) in groups {
        let mut ae = Vec::new();
        let mut ld = Vec::new();
        let mut sp = Vec::new();
        for mut recs in users.into_values() {
            // Fixed summation order makes the result independent of input order.
            recs.sort_by(|a, b| a.seed.cmp(&b.seed).then(a.ae_deg.total_cmp(&b.ae_deg)));
            ae.push(mean(&recs.iter().map(|r| r.ae_deg).collect::<Vec<_>>()));
            ld.push(mean(&recs.iter().map(|r| r.ld_mm).collect::<Vec<_>>()));
            sp.push(mean(&recs.iter().map(|r| r.mean_speed_dps).collect::<Vec<_>>()));
        }
        rows.push(AggregateRow {
            model,
            condition,
            task,
            n_users: ae.len(),
            ae_mean: mean(&ae),
            ae_sd: sample_sd(&ae),
            ld_mean: mean(&ld),
            ld_sd: sample_sd(&ld),
            speed_mean: mean(&sp),
            speed_sd: sample_sd(&sp),
            sd_undefined: ae.len() < 2,
        });
    }
    Ok(rows)
}
