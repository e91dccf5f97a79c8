use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::audit::{AuditEntry, AuditEvent, GENESIS_DIGEST};
use super::phases::{DriftReport, PhaseMetrics, PhaseResult};
use super::store::StudyConfig;
use super::{Phase, PipelineError};
use crate::altai::AnswerEntry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRef {
    pub session_id: String,
    pub user_id: String,
    pub attempt: u32,
    pub shuffle_seed: u64,
    pub num_cases: usize,
}

/// Snapshot of a study, derived entirely from its audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyState {
    pub study_id: String,
    pub phase: Phase,
    /// Incremented every time a failure routes the study back to PreEvaluation.
    pub attempt: u32,
    pub config: StudyConfig,
    pub results: Vec<PhaseResult>,
    pub altai_answers: BTreeMap<String, AnswerEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub altai_file_digest: Option<String>,
    pub sessions: Vec<SessionRef>,
    pub monitor_runs: Vec<DriftReport>,
    pub audit_len: u64,
    pub audit_head: String,
}

impl StudyState {
    /// Folds audit entries into a state. The first entry must create the study.
    pub fn replay(entries: &[AuditEntry]) -> Result<Self, PipelineError> {
        let (first, rest) = entries
            .split_first()
            .ok_or_else(|| PipelineError::CorruptAudit("empty audit log".into()))?;
        let AuditEvent::StudyCreated { study_id, config } = &first.event else {
            return Err(PipelineError::CorruptAudit(
                "first audit entry is not study_created".into(),
            ));
        };
        let mut state = StudyState {
            study_id: study_id.clone(),
            phase: Phase::PreEvaluation,
            attempt: 0,
            config: config.clone(),
            results: Vec::new(),
            altai_answers: BTreeMap::new(),
            altai_file_digest: None,
            sessions: Vec::new(),
            monitor_runs: Vec::new(),
            audit_len: 1,
            audit_head: first.chain_digest.clone(),
        };
        for entry in rest {
            state.apply(entry)?;
        }
        Ok(state)
    }

    pub fn apply(&mut self, entry: &AuditEntry) -> Result<(), PipelineError> {
        if entry.seq != self.audit_len {
            return Err(PipelineError::CorruptAudit(format!(
                "entry seq {} applied to state at length {}",
                entry.seq, self.audit_len
            )));
        }
        match &entry.event {
            AuditEvent::StudyCreated { .. } => return Err(PipelineError::CorruptAudit("study created twice".into())),
            AuditEvent::ConfigChanged { config } => {
                self.config = config.clone();
                if self.phase != Phase::PreEvaluation {
                    self.phase = Phase::PreEvaluation;
                    self.attempt += 1;
                }
            }
            AuditEvent::AltaiAnswered {
                answers, file_digest, ..
            } => {
                for a in answers {
                    self.altai_answers.insert(a.item_id.clone(), a.clone());
                }
                if file_digest.is_some() {
                    self.altai_file_digest = file_digest.clone();
                }
            }
            AuditEvent::PhaseCompleted { result } => self.results.push(result.clone()),
            AuditEvent::Transitioned { to, attempt, .. } => {
                self.phase = *to;
                self.attempt = *attempt;
            }
            AuditEvent::SessionCreated {
                session_id,
                user_id,
                shuffle_seed,
                num_cases,
            } => self.sessions.push(SessionRef {
                session_id: session_id.clone(),
                user_id: user_id.clone(),
                attempt: self.attempt,
                shuffle_seed: *shuffle_seed,
                num_cases: *num_cases,
            }),
            AuditEvent::MonitorRun { report } => self.monitor_runs.push(report.clone()),
        }
        self.audit_len += 1;
        self.audit_head = entry.chain_digest.clone();
        Ok(())
    }

    /// Chain digest the next entry must build on.
    pub fn head(&self) -> &str {
        if self.audit_len == 0 {
            GENESIS_DIGEST
        } else {
            &self.audit_head
        }
    }

    /// Latest result for `phase` within the current attempt.
    pub fn current_result(&self, phase: Phase) -> Option<&PhaseResult> {
        self.results
            .iter()
            .rev()
            .find(|r| r.phase == phase && r.attempt == self.attempt)
    }

    /// Accuracy and mean LLE measured in the current attempt, the reference
    /// for drift monitoring.
    pub fn baseline(&self) -> Option<(f64, f64)> {
        let accuracy = match &self.current_result(Phase::PreEvaluation)?.metrics {
            PhaseMetrics::PreEvaluation { accuracy, .. } => *accuracy,
            _ => return None,
        };
        let lle = match &self.current_result(Phase::MachineCentred)?.metrics {
            PhaseMetrics::MachineCentred(m) => m.lle.mean,
            _ => return None,
        };
        Some((accuracy, lle))
    }

    /// JSON snapshot as written to `state.json`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serializes") + "\n"
    }
}
