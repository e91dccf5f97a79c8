use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{TrustError, TrustJudgment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Complete,
}

/// One rater working through an ordered list of cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustSession {
    pub session_id: String,
    pub user_id: String,
    pub study_id: String,
    /// Study attempt the session was opened in.
    pub attempt: u32,
    pub shuffle_seed: u64,
    pub cases: Vec<String>,
    pub judgments: Vec<TrustJudgment>,
    pub status: SessionStatus,
    /// Threshold currently applied to the explanation overlay (view state only).
    pub keep_fraction: f64,
}

impl TrustSession {
    pub fn new(
        session_id: String,
        user_id: String,
        study_id: String,
        attempt: u32,
        shuffle_seed: u64,
        cases: Vec<String>,
    ) -> Self {
        let status = if cases.is_empty() {
            SessionStatus::Complete
        } else {
            SessionStatus::Open
        };
        Self {
            session_id,
            user_id,
            study_id,
            attempt,
            shuffle_seed,
            cases,
            judgments: Vec::new(),
            status,
            keep_fraction: 1.0,
        }
    }

    pub fn is_judged(&self, case_id: &str) -> bool {
        self.judgments.iter().any(|j| j.case_id == case_id)
    }

    /// First case without a judgment, in session order.
    pub fn current_case(&self) -> Option<&str> {
        self.cases.iter().map(String::as_str).find(|c| !self.is_judged(c))
    }

    pub fn judged(&self) -> usize {
        self.judgments.len()
    }

    pub fn record_judgment(&mut self, judgment: TrustJudgment) -> Result<(), TrustError> {
        if self.status == SessionStatus::Complete {
            return Err(TrustError::SessionComplete);
        }
        if judgment.user_id != self.user_id {
            return Err(TrustError::WrongUser {
                expected: self.user_id.clone(),
                found: judgment.user_id,
            });
        }
        if !self.cases.contains(&judgment.case_id) {
            return Err(TrustError::UnknownCase(judgment.case_id));
        }
        if self.is_judged(&judgment.case_id) {
            return Err(TrustError::DuplicateJudgment {
                user_id: judgment.user_id,
                case_id: judgment.case_id,
            });
        }
        self.judgments.push(judgment);
        if self.judgments.len() == self.cases.len() {
            self.status = SessionStatus::Complete;
        }
        Ok(())
    }

    fn apply(&mut self, record: &SessionRecord) -> Result<(), TrustError> {
        match record {
            SessionRecord::Opened { .. } => Err(TrustError::SessionExists(self.session_id.clone())),
            SessionRecord::Judgment { judgment } => self.record_judgment(judgment.clone()),
            SessionRecord::View { keep_fraction, .. } => {
                self.keep_fraction = *keep_fraction;
                Ok(())
            }
        }
    }
}

/// One line of a session's append-only log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionRecord {
    Opened {
        session_id: String,
        user_id: String,
        study_id: String,
        attempt: u32,
        shuffle_seed: u64,
        cases: Vec<String>,
        timestamp_ms: u64,
    },
    Judgment {
        #[serde(flatten)]
        judgment: TrustJudgment,
    },
    /// Overlay threshold change; logged, never part of a judgment.
    View {
        keep_fraction: f64,
        case_id: Option<String>,
        timestamp_ms: u64,
    },
}

/// Session logs under `<study>/sessions/<session_id>.jsonl`. Every mutation is
/// appended and synced before it is applied in memory; loading replays logs.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("{session_id}.jsonl"))
    }

    fn io_err(path: &Path, e: std::io::Error) -> TrustError {
        TrustError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    fn append(&self, session_id: &str, record: &SessionRecord, create: bool) -> Result<(), TrustError> {
        let path = self.path(session_id);
        let mut opts = OpenOptions::new();
        if create {
            opts.write(true).create_new(true);
        } else {
            opts.append(true);
        }
        let mut file = opts.open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                TrustError::SessionExists(session_id.to_string())
            } else if e.kind() == std::io::ErrorKind::NotFound && !create {
                TrustError::UnknownSession(session_id.to_string())
            } else {
                Self::io_err(&path, e)
            }
        })?;
        let mut line = serde_json::to_string(record).expect("session record serializes");
        line.push('\n');
        file.write_all(line.as_bytes())
            .and_then(|_| file.sync_data())
            .map_err(|e| Self::io_err(&path, e))
    }

    /// Next free id of the form `session-0001`.
    pub fn next_session_id(&self) -> Result<String, TrustError> {
        let count = self.list_ids()?.len();
        let mut n = count + 1;
        loop {
            let id = format!("session-{n:04}");
            if !self.path(&id).exists() {
                return Ok(id);
            }
            n += 1;
        }
    }

    pub fn create(&self, session: &TrustSession, timestamp_ms: u64) -> Result<(), TrustError> {
        fs::create_dir_all(&self.dir).map_err(|e| Self::io_err(&self.dir, e))?;
        let record = SessionRecord::Opened {
            session_id: session.session_id.clone(),
            user_id: session.user_id.clone(),
            study_id: session.study_id.clone(),
            attempt: session.attempt,
            shuffle_seed: session.shuffle_seed,
            cases: session.cases.clone(),
            timestamp_ms,
        };
        self.append(&session.session_id, &record, true)
    }

    /// Validates the judgment against the session, persists it, then applies it.
    pub fn record_judgment(&self, session: &mut TrustSession, judgment: TrustJudgment) -> Result<(), TrustError> {
        let mut next = session.clone();
        next.record_judgment(judgment.clone())?;
        self.append(&session.session_id, &SessionRecord::Judgment { judgment }, false)?;
        *session = next;
        Ok(())
    }

    pub fn record_view(
        &self,
        session: &mut TrustSession,
        keep_fraction: f64,
        case_id: Option<String>,
        timestamp_ms: u64,
    ) -> Result<(), TrustError> {
        let record = SessionRecord::View {
            keep_fraction,
            case_id,
            timestamp_ms,
        };
        self.append(&session.session_id, &record, false)?;
        session.keep_fraction = keep_fraction;
        Ok(())
    }

    pub fn list_ids(&self) -> Result<Vec<String>, TrustError> {
        if !self.dir.exists() {
            return Ok(Vec::new());
        }
        let mut ids: Vec<String> = fs::read_dir(&self.dir)
            .map_err(|e| Self::io_err(&self.dir, e))?
            .filter_map(|entry| {
                let name = entry.ok()?.file_name().into_string().ok()?;
                name.strip_suffix(".jsonl").map(str::to_string)
            })
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Rebuilds a session by replaying its log.
    pub fn load(&self, session_id: &str) -> Result<TrustSession, TrustError> {
        let path = self.path(session_id);
        let file = File::open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                TrustError::UnknownSession(session_id.to_string())
            } else {
                Self::io_err(&path, e)
            }
        })?;
        let corrupt = |message: String| TrustError::CorruptLog {
            path: path.display().to_string(),
            message,
        };
        let mut session: Option<TrustSession> = None;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Self::io_err(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SessionRecord =
                serde_json::from_str(&line).map_err(|e| corrupt(format!("line {}: {e}", lineno + 1)))?;
            match (&mut session, record) {
                (
                    None,
                    SessionRecord::Opened {
                        session_id,
                        user_id,
                        study_id,
                        attempt,
                        shuffle_seed,
                        cases,
                        ..
                    },
                ) => {
                    session = Some(TrustSession::new(
                        session_id,
                        user_id,
                        study_id,
                        attempt,
                        shuffle_seed,
                        cases,
                    ))
                }
                (None, _) => return Err(corrupt("first record is not `opened`".into())),
                (Some(s), record) => s
                    .apply(&record)
                    .map_err(|e| corrupt(format!("line {}: {e}", lineno + 1)))?,
            }
        }
        session.ok_or_else(|| corrupt("empty log".into()))
    }

    pub fn load_all(&self) -> Result<BTreeMap<String, TrustSession>, TrustError> {
        self.list_ids()?
            .into_iter()
            .map(|id| self.load(&id).map(|s| (id, s)))
            .collect()
    }
}
