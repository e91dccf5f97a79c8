use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::phases::{DriftReport, PhaseResult};
use super::store::StudyConfig;
use super::{Phase, PipelineError};
use crate::altai::AnswerEntry;

/// Everything that can change a study. Applying the events of the audit log
/// in order reconstructs the study state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AuditEvent {
    StudyCreated {
        study_id: String,
        config: StudyConfig,
    },
    ConfigChanged {
        config: StudyConfig,
    },
    AltaiAnswered {
        answers: Vec<AnswerEntry>,
        source: String,
        /// Digest of the imported answers file, when the source is a file.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        file_digest: Option<String>,
    },
    PhaseCompleted {
        result: PhaseResult,
    },
    Transitioned {
        from: Phase,
        to: Phase,
        attempt: u32,
        reason: String,
    },
    SessionCreated {
        session_id: String,
        user_id: String,
        shuffle_seed: u64,
        num_cases: usize,
    },
    MonitorRun {
        report: DriftReport,
    },
}

impl AuditEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            AuditEvent::StudyCreated { .. } => "study_created",
            AuditEvent::ConfigChanged { .. } => "config_changed",
            AuditEvent::AltaiAnswered { .. } => "altai_answered",
            AuditEvent::PhaseCompleted { .. } => "phase_completed",
            AuditEvent::Transitioned { .. } => "transitioned",
            AuditEvent::SessionCreated { .. } => "session_created",
            AuditEvent::MonitorRun { .. } => "monitor_run",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub actor: String,
    pub event: AuditEvent,
    /// SHA-256 of the event's JSON encoding.
    pub payload_digest: String,
    /// SHA-256 over the previous chain digest and this entry's header fields.
    pub chain_digest: String,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub const GENESIS_DIGEST: &str = "0000000000000000000000000000000000000000000000000000000000000000";

impl AuditEntry {
    pub fn new(prev_chain: &str, seq: u64, timestamp_ms: u64, actor: &str, event: AuditEvent) -> Self {
        let payload = serde_json::to_vec(&event).expect("audit event serializes");
        let payload_digest = sha256_hex(&payload);
        let chain_digest = chain(prev_chain, seq, timestamp_ms, actor, &payload_digest);
        Self {
            seq,
            timestamp_ms,
            actor: actor.to_string(),
            event,
            payload_digest,
            chain_digest,
        }
    }

    /// Recomputes both digests and checks them against the stored ones.
    pub fn verify(&self, prev_chain: &str) -> bool {
        let payload = serde_json::to_vec(&self.event).expect("audit event serializes");
        let payload_digest = sha256_hex(&payload);
        payload_digest == self.payload_digest
            && chain(prev_chain, self.seq, self.timestamp_ms, &self.actor, &payload_digest) == self.chain_digest
    }
}

fn chain(prev: &str, seq: u64, timestamp_ms: u64, actor: &str, payload_digest: &str) -> String {
    sha256_hex(format!("{prev}|{seq}|{timestamp_ms}|{actor}|{payload_digest}").as_bytes())
}

/// Append-only JSON-lines audit file.
#[derive(Debug, Clone)]
pub struct AuditLog {
    path: PathBuf,
}

impl AuditLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn exists(&self) -> bool {
        self.path.is_file()
    }

    pub fn append(&self, entry: &AuditEntry) -> Result<(), PipelineError> {
        let io = |e: std::io::Error| PipelineError::Io {
            path: self.path.display().to_string(),
            message: e.to_string(),
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io)?;
        let mut line = serde_json::to_string(entry).expect("audit entry serializes");
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(io)?;
        file.sync_data().map_err(io)
    }

    /// Reads and verifies every entry (sequence numbers and digest chain).
    pub fn read(&self) -> Result<Vec<AuditEntry>, PipelineError> {
        let file = File::open(&self.path).map_err(|e| PipelineError::Io {
            path: self.path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut entries = Vec::new();
        let mut prev = GENESIS_DIGEST.to_string();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| PipelineError::Io {
                path: self.path.display().to_string(),
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: AuditEntry = serde_json::from_str(&line)
                .map_err(|e| PipelineError::CorruptAudit(format!("line {}: {e}", idx + 1)))?;
            if entry.seq != entries.len() as u64 {
                return Err(PipelineError::CorruptAudit(format!(
                    "line {}: expected seq {}, found {}",
                    idx + 1,
                    entries.len(),
                    entry.seq
                )));
            }
            if !entry.verify(&prev) {
                return Err(PipelineError::CorruptAudit(format!(
                    "line {}: digest mismatch",
                    idx + 1
                )));
            }
            prev = entry.chain_digest.clone();
            entries.push(entry);
        }
        Ok(entries)
    }
}
