//! Behavioural trust: human trust decisions crossed with model correctness.
//!
//! | model \ user | trusted | distrusted |
//! |--------------|---------|------------|
//! | correct      | tp      | fn         |
//! | incorrect    | fp      | tn         |

mod session;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use session::{SessionRecord, SessionStatus, SessionStore, TrustSession};

#[derive(Debug, Error)]
pub enum TrustError {
    #[error("no model outcome for case {0}")]
    MissingOutcome(String),
    #[error("user {user_id} already judged case {case_id}")]
    DuplicateJudgment { user_id: String, case_id: String },
    #[error("session is complete")]
    SessionComplete,
    #[error("case {0} is not part of this session")]
    UnknownCase(String),
    #[error("judgment by {found} recorded in a session owned by {expected}")]
    WrongUser { expected: String, found: String },
    #[error("no per-user metrics to aggregate")]
    EmptyInput,
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {0} already exists")]
    SessionExists(String),
    #[error("corrupt session log {path}: {message}")]
    CorruptLog { path: String, message: String },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustJudgment {
    pub case_id: String,
    pub user_id: String,
    pub trusted: bool,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustConfusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl TrustConfusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TrustMetrics {
    /// Precision and recall with their harmonic mean (0 when both are 0).
    pub fn from_precision_recall(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

/// Crosses one user's judgments with per-case model correctness.
pub fn build_confusion(
    judgments: &[TrustJudgment],
    outcomes: &BTreeMap<String, bool>,
) -> Result<TrustConfusion, TrustError> {
    let mut seen = HashSet::new();
    let mut c = TrustConfusion::default();
    for j in judgments {
        if !seen.insert((j.user_id.as_str(), j.case_id.as_str())) {
            return Err(TrustError::DuplicateJudgment {
                user_id: j.user_id.clone(),
                case_id: j.case_id.clone(),
            });
        }
        let correct = *outcomes
            .get(&j.case_id)
            .ok_or_else(|| TrustError::MissingOutcome(j.case_id.clone()))?;
        match (correct, j.trusted) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn trust_metrics(c: &TrustConfusion) -> TrustMetrics {
    TrustMetrics::from_precision_recall(ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn_))
}

/// Unweighted mean of each field across users. The mean F1 is the mean of
/// per-user F1 values, not the F1 of the mean precision and recall.
pub fn aggregate_users(per_user: &[TrustMetrics]) -> Result<TrustMetrics, TrustError> {
    if per_user.is_empty() {
        return Err(TrustError::EmptyInput);
    }
    let n = per_user.len() as f64;
    let mean = |f: fn(&TrustMetrics) -> f64| per_user.iter().map(f).sum::<f64>() / n;
    Ok(TrustMetrics {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    })
}
