use serde::{Deserialize, Serialize};

use super::phases::{DatasetInfo, DriftReport, FailReason, PhaseMetrics, PhaseResult, TrustResults};
use super::state::StudyState;
use super::store::StudyConfig;
use super::{GateOutcome, Phase, PipelineError};
use crate::altai::{requirements_for, AltaiRequirement, Verdict};
use crate::sab::GENERATOR_LABEL;
use crate::stats::format_4dp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustTableRow {
    pub user: String,
    pub precision: String,
    pub recall: String,
    pub f1: String,
}

/// Per-user rows plus the mean row, values rounded to four decimals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustTable {
    pub rows: Vec<TrustTableRow>,
    pub mean: TrustTableRow,
}

impl TrustTable {
    pub fn from_results(t: &TrustResults) -> Self {
        let row = |user: &str, m: &crate::trust::TrustMetrics| TrustTableRow {
            user: user.to_string(),
            precision: format_4dp(m.precision),
            recall: format_4dp(m.recall),
            f1: format_4dp(m.f1),
        };
        Self {
            rows: t.per_user.iter().map(|u| row(&u.user_id, &u.metrics)).collect(),
            mean: row("mean", &t.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSection {
    pub phase: Phase,
    pub attempt: u32,
    pub pass: bool,
    pub reasons: Vec<FailReason>,
    /// Set when the phase failed: the layer that sent the study back.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failing_layer: Option<Phase>,
    pub gate_lines: Vec<String>,
    pub gates: Vec<GateOutcome>,
    pub altai: Verdict,
    pub metrics: PhaseMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AltaiSection {
    pub phase: Phase,
    pub attempt: u32,
    pub requirements: Vec<AltaiRequirement>,
    pub verdict: Verdict,
    /// Phase results the checklist answers should be read against.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub linked_gates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub study_id: String,
    pub current_phase: Phase,
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetInfo>,
    pub phases: Vec<PhaseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trust_table: Option<TrustTable>,
    pub altai: Vec<AltaiSection>,
    pub monitor_runs: Vec<DriftReport>,
    pub config: StudyConfig,
    pub notes: Vec<String>,
    pub audit_entries: u64,
    pub audit_digest: String,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Every gate line across all recorded phases, in order.
    pub fn gate_lines(&self) -> Vec<&str> {
        self.phases
            .iter()
            .flat_map(|p| p.gate_lines.iter().map(String::as_str))
            .collect()
    }
}

fn section(r: &PhaseResult) -> PhaseSection {
    PhaseSection {
        phase: r.phase,
        attempt: r.attempt,
        pass: r.pass,
        reasons: r.reasons.clone(),
        failing_layer: (!r.pass).then_some(r.phase),
        gate_lines: r.gates.iter().map(GateOutcome::line).collect(),
        gates: r.gates.clone(),
        altai: r.altai.clone(),
        metrics: r.metrics.clone(),
    }
}

/// Deterministic report of everything in `state`: the same state always
/// serializes to the same bytes.
pub fn emit_report(state: &StudyState) -> Result<EvaluationReport, PipelineError> {
    if state.results.is_empty() {
        return Err(PipelineError::NothingToReport);
    }
    let phases: Vec<PhaseSection> = state.results.iter().map(section).collect();

    let trust_table = state.results.iter().rev().find_map(|r| match &r.metrics {
        PhaseMetrics::HumanCentred(t) => Some(TrustTable::from_results(t)),
        _ => None,
    });
    let dataset = state.results.iter().rev().find_map(|r| match &r.metrics {
        PhaseMetrics::PreEvaluation { dataset, .. } => Some(dataset.clone()),
        _ => None,
    });

    let altai = state
        .results
        .iter()
        .map(|r| {
            let requirements = requirements_for(r.phase).to_vec();
            let linked_gates = if requirements.contains(&AltaiRequirement::TechnicalRobustnessSafety) {
                state
                    .results
                    .iter()
                    .filter(|m| m.phase == Phase::MachineCentred && m.attempt == r.attempt)
                    .flat_map(|m| m.gates.iter().map(GateOutcome::line))
                    .collect()
            } else {
                Vec::new()
            };
            AltaiSection {
                phase: r.phase,
                attempt: r.attempt,
                requirements,
                verdict: r.altai.clone(),
                linked_gates,
            }
        })
        .collect();

    let g = &state.config.gates;
    let mut notes = vec![
        format!(
            "gate thresholds: lle_gate={}, accuracy_min={}, trust_f1_min={}, randomisation_rho_max={}, accuracy_drift_band={}",
            g.lle_gate, g.accuracy_min, g.trust_f1_min, g.randomisation_rho_max, g.accuracy_drift_band
        ),
        format!("robustness rule: {}", super::phases::LLE_RULE),
    ];
    if let Some(generator) = dataset.as_ref().and_then(|d| d.generator.as_deref()) {
        if generator == GENERATOR_LABEL {
            notes.push(format!(
                "dataset produced by `{generator}`: a single square region per case, one simple benchmark design among several and not a clinical dataset"
            ));
        } else {
            notes.push(format!("dataset generator: {generator}"));
        }
    }

    Ok(EvaluationReport {
        study_id: state.study_id.clone(),
        current_phase: state.phase,
        attempt: state.attempt,
        dataset,
        phases,
        trust_table,
        altai,
        monitor_runs: state.monitor_runs.clone(),
        config: state.config.clone(),
        notes,
        audit_entries: state.audit_len,
        audit_digest: state.audit_head.clone(),
    })
}
