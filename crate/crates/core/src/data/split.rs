use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which generalization axis a test set probes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Held-out user and held-out stage.
    UserStage,
    /// Held-out user, seen stage.
    User,
    /// Seen user, held-out stage.
    Stage,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::UserStage, Condition::User, Condition::Stage];

    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::UserStage => "user_stage",
            Condition::User => "user",
            Condition::Stage => "stage",
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown condition {s:?}")))
    }
}

/// Identity of a session as far as splitting is concerned.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionKey {
    pub session_id: String,
    pub user_id: String,
    pub stage_id: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub held_out_users: Vec<String>,
    pub held_out_stages: Vec<String>,
}

impl SplitConfig {
    /// Holds out the last user and the last stage in sorted order.
    pub fn last_of_each(keys: &[SessionKey]) -> Result<Self> {
        let users: BTreeSet<&str> = keys.iter().map(|k| k.user_id.as_str()).collect();
        let stages: BTreeSet<&str> = keys.iter().map(|k| k.stage_id.as_str()).collect();
        match (users.last(), stages.last()) {
            (Some(u), Some(s)) => Ok(Self { held_out_users: vec![u.to_string()], held_out_stages: vec![s.to_string()] }),
            _ => Err(Error::InvalidArgument("no sessions to split".into())),
        }
    }
}

/// Session ids per split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test_user: Vec<String>,
    pub test_stage: Vec<String>,
    pub test_user_stage: Vec<String>,
}

impl Splits {
    pub fn test(&self, condition: Condition) -> &[String] {
        match condition {
            Condition::UserStage => &self.test_user_stage,
            Condition::User => &self.test_user,
            Condition::Stage => &self.test_stage,
        }
    }
}

/// Assigns each session to exactly one split. Within every seen
/// (user, stage) pair with at least two sessions, the last session by id
/// goes to validation.
pub fn split(cfg: &SplitConfig, keys: &[SessionKey]) -> Result<Splits> {
    let users: BTreeSet<&str> = keys.iter().map(|k| k.user_id.as_str()).collect();
    let stages: BTreeSet<&str> = keys.iter().map(|k| k.stage_id.as_str()).collect();
    let check = |held: &[String], all: &BTreeSet<&str>, what: &str| -> Result<()> {
        if held.is_empty() {
            return Err(Error::Config(format!("at least one {what} must be held out")));
        }
        if let Some(h) = held.iter().find(|h| !all.contains(h.as_str())) {
            return Err(Error::Config(format!("held-out {what} {h:?} has no sessions")));
        }
        if held.iter().collect::<BTreeSet<_>>().len() >= all.len() {
            return Err(Error::Config(format!("every {what} is held out; nothing left to train on")));
        }
        Ok(())
    };
    check(&cfg.held_out_users, &users, "user")?;
    check(&cfg.held_out_stages, &stages, "stage")?;
    let mut seen = BTreeSet::new();
    if let Some(k) = keys.iter().find(|k| !seen.insert(k.session_id.as_str())) {
        return Err(Error::InvalidArgument(format!("duplicate session id {:?}", k.session_id)));
    }

    let mut out = Splits::default();
    let mut pairs: BTreeMap<(&str, &str), Vec<&str>> = BTreeMap::new();
    for k in keys {
        let hu = cfg.held_out_users.contains(&k.user_id);
        let hs = cfg.held_out_stages.contains(&k.stage_id);
        let id = k.session_id.clone();
        match (hu, hs) {
            (true, true) => out.test_user_stage.push(id),
            (true, false) => out.test_user.push(id),
            (false, true) => out.test_stage.push(id),
            (false, false) => pairs.entry((&k.user_id, &k.stage_id)).or_default().push(&k.session_id),
        }
    }
    for mut ids in pairs.into_values() {
        ids.sort_unstable();
        if ids.len() >= 2 {
            out.val.push(ids.pop().unwrap().to_string());
        }
        out.train.extend(ids.into_iter().map(str::to_string));
    }
    if out.train.is_empty() || out.val.is_empty() {
        return Err(Error::Config("split leaves train or validation empty; need two sessions per pair".into()));
    }
    for v in [&mut out.train, &mut out.val, &mut out.test_user, &mut out.test_stage, &mut out.test_user_stage] {
        v.sort();
    }
    Ok(out)
}
