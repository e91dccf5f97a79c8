//! The phased study pipeline.
//!
//! ```text
//! PreEvaluation ──pass──▶ MachineCentred ──pass──▶ HumanCentred ──pass──▶ Operation ─┐
//!      ▲   │                    │                       │                     ▲       │
//!      │   └─fail─┐             │                       │                     └─pass──┘
//!      └──────────┴─────fail────┴──────────fail─────────┘
//! ```
//!
//! Every failure returns to `PreEvaluation` and starts a new attempt. State is
//! event-sourced: the audit log replays to the exact snapshot.

mod audit;
mod phases;
mod report;
mod state;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{AuditEntry, AuditEvent, AuditLog};
pub use phases::{
    case_outcomes, drift_report, evaluate_machine_metrics, phase0_verdict, phase1_verdict, phase2_verdict,
    run_operation_monitor, run_phase0, run_phase1, run_phase2, session_cases, transition, trust_results, DatasetInfo,
    DriftReport, FailReason, MachineMetrics, PhaseMetrics, PhaseResult, TrustResults, UserTrust, LLE_RULE,
};
pub use report::{emit_report, AltaiSection, EvaluationReport, PhaseSection, TrustTable, TrustTableRow};
pub use state::{SessionRef, StudyState};
pub use store::{now_ms, PerturbationSettings, Study, StudyConfig, StudyContext, StudyPaths};

use crate::altai::AltaiError;
use crate::dataset::DatasetError;
use crate::metrics::MetricError;
use crate::models::ModelError;
use crate::trust::TrustError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration incomplete: {0}")]
    ConfigurationIncomplete(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{phase} cannot run while the study is in {current}")]
    PhaseOutOfOrder { phase: Phase, current: Phase },
    #[error("result for {result} does not belong to current phase {current}")]
    StalePhaseResult { result: Phase, current: Phase },
    #[error("no complete trust sessions in the current attempt")]
    NoCompleteSessions,
    #[error("no phase has been executed yet")]
    NothingToReport,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("corrupt audit log: {0}")]
    CorruptAudit(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Trust(#[from] TrustError),
    #[error(transparent)]
    Altai(#[from] AltaiError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PreEvaluation,
    MachineCentred,
    HumanCentred,
    Operation,
}

impl Phase {
    pub const ALL: [Phase; 4] = [
        Phase::PreEvaluation,
        Phase::MachineCentred,
        Phase::HumanCentred,
        Phase::Operation,
    ];

    /// Forward successor; `Operation` recurs.
    pub fn next(self) -> Phase {
        match self {
            Phase::PreEvaluation => Phase::MachineCentred,
            Phase::MachineCentred => Phase::HumanCentred,
            Phase::HumanCentred | Phase::Operation => Phase::Operation,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::PreEvaluation => "pre_evaluation",
            Phase::MachineCentred => "machine_centred",
            Phase::HumanCentred => "human_centred",
            Phase::Operation => "operation",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = String;

    /// Accepts snake_case, kebab-case, camel case names and the phase numbers
    /// 0, 1, 2 (Operation has no number).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "0" | "preevaluation" | "phase0" => Ok(Phase::PreEvaluation),
            "1" | "machinecentred" | "machinecentered" | "machine" | "phase1" => Ok(Phase::MachineCentred),
            "2" | "humancentred" | "humancentered" | "human" | "phase2" => Ok(Phase::HumanCentred),
            "operation" | "monitor" => Ok(Phase::Operation),
            _ => Err(format!("unknown phase `{s}`")),
        }
    }
}

/// Quantitative thresholds for every gate. All values lie in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    /// Maximum acceptable mean bounded Lipschitz estimate.
    pub lle_gate: f64,
    pub accuracy_min: f64,
    pub trust_f1_min: f64,
    /// Randomisation passes when the mean rank correlation is below this.
    pub randomisation_rho_max: f64,
    /// Absolute accuracy drop that flags drift during operation.
    pub accuracy_drift_band: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            lle_gate: 0.10,
            accuracy_min: 0.70,
            trust_f1_min: 0.70,
            randomisation_rho_max: 0.5,
            accuracy_drift_band: 0.05,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fields = [
            ("lle_gate", self.lle_gate),
            ("accuracy_min", self.accuracy_min),
            ("trust_f1_min", self.trust_f1_min),
            ("randomisation_rho_max", self.randomisation_rho_max),
            ("accuracy_drift_band", self.accuracy_drift_band),
        ];
        for (name, value) in fields {
            if !(0.0..=1.0).contains(&value) {
                return Err(PipelineError::InvalidConfig(format!(
                    "gate {name} = {value} is outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtMost,
    AtLeast,
    Below,
}

impl Comparison {
    fn holds(self, measured: f64, threshold: f64) -> bool {
        match self {
            Comparison::AtMost => measured <= threshold,
            Comparison::AtLeast => measured >= threshold,
            Comparison::Below => measured < threshold,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparison::AtMost => "<=",
            Comparison::AtLeast => ">=",
            Comparison::Below => "<",
        }
    }
}

/// One evaluated threshold, always naming both the measured value and the
/// threshold it was compared with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub gate: String,
    pub measured: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    pub pass: bool,
    pub rule: String,
}

impl GateOutcome {
    pub fn evaluate(gate: &str, measured: f64, threshold: f64, comparison: Comparison, rule: &str) -> Self {
        Self {
            gate: gate.to_string(),
            measured,
            threshold,
            comparison,
            pass: comparison.holds(measured, threshold),
            rule: rule.to_string(),
        }
    }

    /// `mean_lle=0.0820, threshold=0.10, pass=true`
    pub fn line(&self) -> String {
        format!(
            "{}={:.4}, threshold={:.2}, pass={}",
            self.gate, self.measured, self.threshold, self.pass
        )
    }

    pub fn describe(&self) -> String {
        format!("{} {} {}", self.gate, self.comparison.symbol(), self.threshold)
    }
}
