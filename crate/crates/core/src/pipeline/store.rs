use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::audit::{AuditEntry, AuditEvent, AuditLog, GENESIS_DIGEST};
use super::phases::{run_operation_monitor, run_phase0, run_phase1, run_phase2, session_cases, transition};
use super::phases::{DriftReport, PhaseResult};
use super::state::StudyState;
use super::{GateConfig, Phase, PipelineError};
use crate::altai::{default_bank, validate_answers, validate_bank, AnswerEntry, BankEntry};
use crate::dataset::{load_dataset, Dataset};
use crate::explainers::ExplainerSpec;
use crate::metrics::{PerturbationConfig, DEFAULT_NUM_SAMPLES};
use crate::models::{Model, ModelSpec};
use crate::trust::{SessionStore, TrustSession};

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn default_num_samples() -> usize {
    DEFAULT_NUM_SAMPLES
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSettings {
    /// Sampling radius; defaults to 0.1 × dataset input std.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default = "default_num_samples")]
    pub num_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PerturbationSettings {
    fn default() -> Self {
        Self {
            epsilon: None,
            num_samples: DEFAULT_NUM_SAMPLES,
            seed: 0,
        }
    }
}

/// `study.json`. Paths are relative to the study directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub study_id: String,
    pub dataset: String,
    pub model: String,
    pub explainer: ExplainerSpec,
    pub gates: GateConfig,
    #[serde(default)]
    pub perturbation: PerturbationSettings,
    #[serde(default)]
    pub randomisation_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub altai_bank: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub altai_answers: Option<String>,
    #[serde(default)]
    pub session_seed: u64,
    /// Number of cases per trust session (sorted ids, truncated); all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trust_cases: Option<usize>,
    /// k for top-k complexity; defaults to the ground-truth support size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complexity_k: Option<usize>,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, value) in [
            ("study_id", &self.study_id),
            ("dataset", &self.dataset),
            ("model", &self.model),
        ] {
            if value.trim().is_empty() {
                return Err(PipelineError::ConfigurationIncomplete(format!("`{name}` is empty")));
            }
        }
        self.gates.validate()?;
        if let Some(eps) = self.perturbation.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(PipelineError::InvalidConfig(format!("epsilon must be > 0, got {eps}")));
            }
        }
        if self.perturbation.num_samples < 2 {
            return Err(PipelineError::InvalidConfig("num_samples must be >= 2".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                PipelineError::ConfigurationIncomplete(format!("{} not found", path.display()))
            }
            _ => io_error(path, e),
        })?;
        let config: StudyConfig = serde_json::from_str(&text).map_err(|e| {
            let msg = format!("{}: {e}", path.display());
            if e.to_string().contains("missing field") {
                PipelineError::ConfigurationIncomplete(msg)
            } else {
                PipelineError::InvalidConfig(msg)
            }
        })?;
        config.validate()?;
        Ok(config)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_error(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

#[derive(Debug, Clone)]
pub struct StudyPaths {
    pub root: PathBuf,
    pub study_json: PathBuf,
    pub state_json: PathBuf,
    pub audit_log: PathBuf,
    pub sessions: PathBuf,
    pub report_json: PathBuf,
}

impl StudyPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        Self {
            study_json: root.join("study.json"),
            state_json: root.join("state.json"),
            audit_log: root.join("audit.log"),
            sessions: root.join("sessions"),
            report_json: root.join("report.json"),
            root,
        }
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }
}

/// Loaded artifacts a study evaluates.
pub struct StudyContext {
    pub config: StudyConfig,
    pub dataset: Dataset,
    pub model: Model,
    pub bank: Vec<BankEntry>,
}

impl StudyContext {
    pub fn load(paths: &StudyPaths, config: &StudyConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let dataset = load_dataset(&paths.resolve(&config.dataset))?;
        let model_path = paths.resolve(&config.model);
        let text = fs::read_to_string(&model_path).map_err(|e| io_error(&model_path, e))?;
        let mut spec: ModelSpec = serde_json::from_str(&text)
            .map_err(|e| PipelineError::InvalidConfig(format!("{}: {e}", model_path.display())))?;
        if let ModelSpec::External { workdir, .. } = &mut spec {
            let base = model_path.parent().unwrap_or(Path::new("."));
            let dir = match workdir.as_deref() {
                Some(w) => base.join(w),
                None => base.to_path_buf(),
            };
            *workdir = Some(dir.display().to_string());
        }
        let model = Model::from_spec(&spec)?;
        let bank = match &config.altai_bank {
            Some(rel) => {
                let path = paths.resolve(rel);
                let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| PipelineError::InvalidConfig(format!("{}: {e}", path.display())))?
            }
            None => default_bank(),
        };
        validate_bank(&bank)?;
        Ok(Self {
            config: config.clone(),
            dataset,
            model,
            bank,
        })
    }

    pub fn perturbation(&self) -> PerturbationConfig {
        let p = &self.config.perturbation;
        match p.epsilon {
            Some(epsilon) => PerturbationConfig {
                epsilon,
                num_samples: p.num_samples,
                seed: p.seed,
            },
            None => PerturbationConfig::for_dataset(&self.dataset, p.num_samples, p.seed),
        }
    }
}

/// A study directory: configuration, audit log, derived snapshot and trust
/// sessions. One `Study` value is the single writer.
#[derive(Debug)]
pub struct Study {
    paths: StudyPaths,
    log: AuditLog,
    state: StudyState,
}

impl Study {
    /// Writes `study.json` into `dir` and opens it.
    pub fn create(dir: &Path, config: &StudyConfig, actor: &str) -> Result<Self, PipelineError> {
        config.validate()?;
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let paths = StudyPaths::new(dir);
        let text = serde_json::to_string_pretty(config).expect("config serializes") + "\n";
        write_atomic(&paths.study_json, text.as_bytes())?;
        Self::open_as(dir, actor)
    }

    pub fn open(dir: &Path) -> Result<Self, PipelineError> {
        Self::open_as(dir, "system")
    }

    /// Opens a study, starting its audit log if needed. Edits to `study.json`
    /// made since the last run are recorded as a configuration change.
    pub fn open_as(dir: &Path, actor: &str) -> Result<Self, PipelineError> {
        let paths = StudyPaths::new(dir);
        let config = StudyConfig::load(&paths.study_json)?;
        let log = AuditLog::new(&paths.audit_log);
        let mut study = if log.exists() {
            let state = StudyState::replay(&log.read()?)?;
            Study { paths, log, state }
        } else {
            let entry = AuditEntry::new(
                GENESIS_DIGEST,
                0,
                now_ms(),
                actor,
                AuditEvent::StudyCreated {
                    study_id: config.study_id.clone(),
                    config: config.clone(),
                },
            );
            let state = StudyState::replay(std::slice::from_ref(&entry))?;
            log.append(&entry)?;
            Study { paths, log, state }
        };
        if study.state.config != config {
            study.record(actor, AuditEvent::ConfigChanged { config })?;
        } else {
            study.write_state()?;
        }
        Ok(study)
    }

    /// Replays the audit log without writing anything.
    pub fn read_state(dir: &Path) -> Result<StudyState, PipelineError> {
        StudyState::replay(&AuditLog::new(StudyPaths::new(dir).audit_log).read()?)
    }

    pub fn paths(&self) -> &StudyPaths {
        &self.paths
    }

    pub fn state(&self) -> &StudyState {
        &self.state
    }

    pub fn audit(&self) -> &AuditLog {
        &self.log
    }

    pub fn sessions(&self) -> SessionStore {
        SessionStore::new(&self.paths.sessions)
    }

    pub fn context(&self) -> Result<StudyContext, PipelineError> {
        StudyContext::load(&self.paths, &self.state.config)
    }

    fn write_state(&self) -> Result<(), PipelineError> {
        let json = self.state.to_json();
        if fs::read_to_string(&self.paths.state_json).is_ok_and(|cur| cur == json) {
            return Ok(());
        }
        write_atomic(&self.paths.state_json, json.as_bytes())
    }

    /// Appends one event, applies it and refreshes `state.json`.
    pub fn record(&mut self, actor: &str, event: AuditEvent) -> Result<(), PipelineError> {
        let entry = AuditEntry::new(self.state.head(), self.state.audit_len, now_ms(), actor, event);
        let mut next = self.state.clone();
        next.apply(&entry)?;
        self.log.append(&entry)?;
        self.state = next;
        self.write_state()
    }

    /// Records a phase result and the transition it triggers.
    pub fn complete_phase(&mut self, actor: &str, result: PhaseResult) -> Result<Phase, PipelineError> {
        for event in transition(&self.state, result)? {
            self.record(actor, event)?;
        }
        Ok(self.state.phase)
    }

    /// Runs the phase the study is currently in. Operation has no phase run;
    /// use [`Study::monitor`].
    pub fn run_current_phase(&mut self, ctx: &StudyContext, actor: &str) -> Result<PhaseResult, PipelineError> {
        let result = match self.state.phase {
            Phase::PreEvaluation => run_phase0(ctx, &self.state)?,
            Phase::MachineCentred => run_phase1(ctx, &self.state)?,
            Phase::HumanCentred => {
                let sessions: Vec<TrustSession> = self.sessions().load_all()?.into_values().collect();
                run_phase2(ctx, &self.state, &sessions)?
            }
            Phase::Operation => {
                return Err(PipelineError::PhaseOutOfOrder {
                    phase: Phase::Operation,
                    current: Phase::Operation,
                })
            }
        };
        self.complete_phase(actor, result.clone())?;
        Ok(result)
    }

    /// Imports the configured answers file when its content changed since the
    /// last import. Returns whether anything was recorded.
    pub fn sync_answers(&mut self, ctx: &StudyContext, actor: &str) -> Result<bool, PipelineError> {
        let Some(rel) = self.state.config.altai_answers.clone() else {
            return Ok(false);
        };
        let path = self.paths.resolve(&rel);
        let bytes = fs::read(&path).map_err(|e| io_error(&path, e))?;
        let digest = super::audit::sha256_hex(&bytes);
        if self.state.altai_file_digest.as_deref() == Some(digest.as_str()) {
            return Ok(false);
        }
        let answers: Vec<AnswerEntry> = serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::InvalidConfig(format!("{}: {e}", path.display())))?;
        validate_answers(&ctx.bank, &answers)?;
        self.record(
            actor,
            AuditEvent::AltaiAnswered {
                answers,
                source: rel,
                file_digest: Some(digest),
            },
        )?;
        Ok(true)
    }

    pub fn record_answers(
        &mut self,
        ctx: &StudyContext,
        actor: &str,
        answers: Vec<AnswerEntry>,
    ) -> Result<(), PipelineError> {
        validate_answers(&ctx.bank, &answers)?;
        self.record(
            actor,
            AuditEvent::AltaiAnswered {
                answers,
                source: "api".into(),
                file_digest: None,
            },
        )
    }

    /// Opens a trust session over the evaluation cases; only allowed while
    /// the study is in HumanCentred.
    pub fn create_session(&mut self, ctx: &StudyContext, user_id: &str) -> Result<TrustSession, PipelineError> {
        if self.state.phase != Phase::HumanCentred {
            return Err(PipelineError::PhaseOutOfOrder {
                phase: Phase::HumanCentred,
                current: self.state.phase,
            });
        }
        let store = self.sessions();
        let session_id = store.next_session_id()?;
        let (cases, shuffle_seed) = session_cases(
            &ctx.dataset,
            self.state.config.trust_cases,
            self.state.config.session_seed,
            &session_id,
        );
        let session = TrustSession::new(
            session_id.clone(),
            user_id.to_string(),
            self.state.study_id.clone(),
            self.state.attempt,
            shuffle_seed,
            cases,
        );
        store.create(&session, now_ms())?;
        self.record(
            user_id,
            AuditEvent::SessionCreated {
                session_id,
                user_id: user_id.to_string(),
                shuffle_seed,
                num_cases: session.cases.len(),
            },
        )?;
        Ok(session)
    }

    /// Drift check on fresh data. Only flagged drift is written to the audit log.
    pub fn monitor(&mut self, ctx: &StudyContext, actor: &str, data: &Dataset) -> Result<DriftReport, PipelineError> {
        let report = run_operation_monitor(ctx, &self.state, data)?;
        if report.drift {
            self.record(actor, AuditEvent::MonitorRun { report: report.clone() })?;
        }
        Ok(report)
    }

    /// Writes `report.json` and returns its bytes.
    pub fn write_report(&self, out: Option<&Path>) -> Result<String, PipelineError> {
        let text = super::report::emit_report(&self.state)?.to_json();
        let path = out.unwrap_or(&self.paths.report_json);
        write_atomic(path, text.as_bytes())?;
        Ok(text)
    }
}
