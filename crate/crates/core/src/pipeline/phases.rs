use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::audit::AuditEvent;
use super::state::StudyState;
use super::store::StudyContext;
use super::{Comparison, GateConfig, GateOutcome, Phase, PipelineError};
use crate::altai::{evaluate_checklist, items_for_phase, Verdict};
use crate::dataset::Dataset;
use crate::explainers::Explain;
use crate::metrics::{
    aggregate, complexity, fidelity_vs_gt, lle_score, localisation, randomisation_check, sensitivity_both,
    InstanceScore, MetricError, MetricSummary, PerturbationConfig, RandomisationResult,
};
use crate::models::{accuracy, Model};
use crate::trust::{aggregate_users, build_confusion, trust_metrics, TrustConfusion, TrustMetrics, TrustSession};

pub const LLE_RULE: &str = "fixed cut: mean LLE <= lle_gate on the [0, 1] scale";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    AccuracyBelowMinimum,
    MissingAttestation,
    AltaiBlocking,
    LleAboveGate,
    RandomisationFailed,
    TrustBelowMinimum,
    Drift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineMetrics {
    pub explainer_id: String,
    pub perturbation: PerturbationConfig,
    pub lle: MetricSummary,
    pub sensitivity_avg: MetricSummary,
    pub sensitivity_max: MetricSummary,
    pub randomisation: RandomisationResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity_f1: Option<MetricSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity_cosine: Option<MetricSummary>,
    pub complexity_k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<MetricSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk_mass: Option<MetricSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localisation: Option<MetricSummary>,
    /// Instances left out of complexity/localisation because their
    /// attribution was all zero.
    pub zero_attributions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTrust {
    pub user_id: String,
    pub sessions: Vec<String>,
    pub confusion: TrustConfusion,
    pub metrics: TrustMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustResults {
    pub per_user: Vec<UserTrust>,
    pub mean: TrustMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub dataset: String,
    pub accuracy: f64,
    pub baseline_accuracy: f64,
    pub accuracy_drop: f64,
    pub mean_lle: f64,
    pub baseline_mean_lle: f64,
    pub gates: Vec<GateOutcome>,
    pub drift: bool,
    /// Advice only: monitoring never moves the study by itself.
    pub recommendation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

impl DatasetInfo {
    pub fn of(dataset: &Dataset) -> Self {
        Self {
            name: dataset.manifest.name.clone(),
            size: dataset.len(),
            generator: dataset.manifest.generator.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseMetrics {
    PreEvaluation {
        accuracy: f64,
        attestation_present: bool,
        dataset: DatasetInfo,
    },
    MachineCentred(Box<MachineMetrics>),
    HumanCentred(TrustResults),
    Operation(DriftReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub phase: Phase,
    pub attempt: u32,
    pub pass: bool,
    pub reasons: Vec<FailReason>,
    pub gates: Vec<GateOutcome>,
    pub altai: Verdict,
    pub metrics: PhaseMetrics,
}

fn require_phase(state: &StudyState, phase: Phase) -> Result<(), PipelineError> {
    if state.phase != phase {
        return Err(PipelineError::PhaseOutOfOrder {
            phase,
            current: state.phase,
        });
    }
    Ok(())
}

fn altai_verdict(ctx: &StudyContext, state: &StudyState, phase: Phase) -> Result<Verdict, PipelineError> {
    let items = items_for_phase(phase, &ctx.bank, &state.altai_answers)?;
    Ok(evaluate_checklist(&items))
}

pub fn phase0_verdict(
    accuracy: f64,
    attestation_present: bool,
    dataset: DatasetInfo,
    altai: Verdict,
    gates: &GateConfig,
    attempt: u32,
) -> PhaseResult {
    let gate = GateOutcome::evaluate(
        "accuracy",
        accuracy,
        gates.accuracy_min,
        Comparison::AtLeast,
        "accuracy >= accuracy_min",
    );
    let mut reasons = Vec::new();
    if !gate.pass {
        reasons.push(FailReason::AccuracyBelowMinimum);
    }
    if !attestation_present {
        reasons.push(FailReason::MissingAttestation);
    }
    if !altai.pass {
        reasons.push(FailReason::AltaiBlocking);
    }
    PhaseResult {
        phase: Phase::PreEvaluation,
        attempt,
        pass: reasons.is_empty(),
        reasons,
        gates: vec![gate],
        altai,
        metrics: PhaseMetrics::PreEvaluation {
            accuracy,
            attestation_present,
            dataset,
        },
    }
}

/// Accuracy, privacy attestation and the pre-evaluation checklist.
pub fn run_phase0(ctx: &StudyContext, state: &StudyState) -> Result<PhaseResult, PipelineError> {
    require_phase(state, Phase::PreEvaluation)?;
    let acc = accuracy(&ctx.model, &ctx.dataset)?;
    let altai = altai_verdict(ctx, state, Phase::PreEvaluation)?;
    Ok(phase0_verdict(
        acc,
        ctx.dataset.manifest.attestation_present(),
        DatasetInfo::of(&ctx.dataset),
        altai,
        &ctx.config.gates,
        state.attempt,
    ))
}

pub fn phase1_verdict(metrics: MachineMetrics, altai: Verdict, gates: &GateConfig, attempt: u32) -> PhaseResult {
    let lle = GateOutcome::evaluate(
        "mean_lle",
        metrics.lle.mean,
        gates.lle_gate,
        Comparison::AtMost,
        LLE_RULE,
    );
    let rand = GateOutcome::evaluate(
        "randomisation_rho_mean",
        metrics.randomisation.rho_mean,
        gates.randomisation_rho_max,
        Comparison::Below,
        "mean Spearman rho between original and re-initialized model explanations < randomisation_rho_max",
    );
    let mut reasons = Vec::new();
    if !lle.pass {
        reasons.push(FailReason::LleAboveGate);
    }
    if !rand.pass {
        reasons.push(FailReason::RandomisationFailed);
    }
    if !altai.pass {
        reasons.push(FailReason::AltaiBlocking);
    }
    PhaseResult {
        phase: Phase::MachineCentred,
        attempt,
        pass: reasons.is_empty(),
        reasons,
        gates: vec![lle, rand],
        altai,
        metrics: PhaseMetrics::MachineCentred(Box::new(metrics)),
    }
}

fn skip_zero<T>(r: Result<T, MetricError>) -> Result<Option<T>, MetricError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricError::AllZeroAttribution) => Ok(None),
        Err(e) => Err(e),
    }
}

struct InstanceMetrics {
    id: String,
    lle: f64,
    sens: [f64; 2],
    fidelity: Option<(f64, f64)>,
    complexity: Option<(f64, f64)>,
    localisation: Option<f64>,
}

/// Every machine-centred metric over a dataset. Per-instance work runs in
/// parallel; summaries are sorted by instance id.
pub fn evaluate_machine_metrics(
    model: &Model,
    explainer: &dyn Explain,
    dataset: &Dataset,
    perturbation: &PerturbationConfig,
    randomisation_seed: u64,
    rho_max: f64,
    complexity_k: Option<usize>,
) -> Result<MachineMetrics, PipelineError> {
    if dataset.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    perturbation.validate()?;
    let d = dataset.instances[0].input.len();
    let k = complexity_k
        .or_else(|| {
            dataset.instances[0]
                .gt_attribution
                .as_ref()
                .map(|gt| gt.data().iter().filter(|&&v| v != 0.0).count())
                .filter(|&n| n > 0)
        })
        .unwrap_or_else(|| ((d as f64) * 0.1).ceil() as usize)
        .clamp(1, d);

    let rows = dataset
        .instances
        .par_iter()
        .map(|inst| -> Result<InstanceMetrics, PipelineError> {
            let lle = lle_score(model, explainer, &inst.id, &inst.input, perturbation)?;
            let sens = sensitivity_both(model, explainer, &inst.id, &inst.input, perturbation)?;
            let target = model.predict(&inst.input)?.predicted_class;
            let attribution = explainer
                .explain(model, &inst.input, target, &inst.id)
                .map_err(MetricError::from)?;
            let fidelity = inst
                .gt_attribution
                .as_ref()
                .map(|gt| fidelity_vs_gt(&attribution, gt).map(|r| (r.f1, r.cosine)))
                .transpose()?;
            let complexity = skip_zero(complexity(&attribution, k).map(|c| (c.entropy, c.topk_mass)))?;
            let localisation = match &inst.roi {
                Some(roi) => skip_zero(localisation(&attribution, roi))?,
                None => None,
            };
            Ok(InstanceMetrics {
                id: inst.id.clone(),
                lle,
                sens,
                fidelity,
                complexity,
                localisation,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let summary = |f: &dyn Fn(&InstanceMetrics) -> Option<f64>| -> Result<Option<MetricSummary>, PipelineError> {
        let scores: Vec<InstanceScore> = rows
            .iter()
            .filter_map(|r| {
                f(r).map(|score| InstanceScore {
                    instance_id: r.id.clone(),
                    score,
                })
            })
            .collect();
        if scores.is_empty() {
            Ok(None)
        } else {
            Ok(Some(aggregate(scores)?))
        }
    };
    let required = |s: Option<MetricSummary>| s.ok_or(PipelineError::EmptyDataset);

    let randomisation = randomisation_check(model, explainer, dataset, randomisation_seed, rho_max)?;
    Ok(MachineMetrics {
        explainer_id: explainer.id(),
        perturbation: *perturbation,
        lle: required(summary(&|r| Some(r.lle))?)?,
        sensitivity_avg: required(summary(&|r| Some(r.sens[0]))?)?,
        sensitivity_max: required(summary(&|r| Some(r.sens[1]))?)?,
        randomisation,
        fidelity_f1: summary(&|r| r.fidelity.map(|f| f.0))?,
        fidelity_cosine: summary(&|r| r.fidelity.map(|f| f.1))?,
        complexity_k: k,
        entropy: summary(&|r| r.complexity.map(|c| c.0))?,
        topk_mass: summary(&|r| r.complexity.map(|c| c.1))?,
        localisation: summary(&|r| r.localisation)?,
        zero_attributions: rows.iter().filter(|r| r.complexity.is_none()).count(),
    })
}

/// Robustness, randomisation and the machine-centred checklist.
pub fn run_phase1(ctx: &StudyContext, state: &StudyState) -> Result<PhaseResult, PipelineError> {
    require_phase(state, Phase::MachineCentred)?;
    let metrics = evaluate_machine_metrics(
        &ctx.model,
        &ctx.config.explainer,
        &ctx.dataset,
        &ctx.perturbation(),
        ctx.config.randomisation_seed,
        ctx.config.gates.randomisation_rho_max,
        ctx.config.complexity_k,
    )?;
    let altai = altai_verdict(ctx, state, Phase::MachineCentred)?;
    Ok(phase1_verdict(metrics, altai, &ctx.config.gates, state.attempt))
}

/// Per-case model correctness over the dataset.
pub fn case_outcomes(model: &Model, dataset: &Dataset) -> Result<BTreeMap<String, bool>, PipelineError> {
    dataset
        .instances
        .iter()
        .map(|inst| {
            Ok((
                inst.id.clone(),
                model.predict(&inst.input)?.predicted_class == inst.label,
            ))
        })
        .collect()
}

/// Per-user trust metrics (all sessions of a user pooled) and their mean.
pub fn trust_results(
    sessions: &[&TrustSession],
    outcomes: &BTreeMap<String, bool>,
) -> Result<TrustResults, PipelineError> {
    let mut by_user: BTreeMap<&str, Vec<&TrustSession>> = BTreeMap::new();
    for s in sessions {
        by_user.entry(s.user_id.as_str()).or_default().push(s);
    }
    let per_user = by_user
        .into_iter()
        .map(|(user, sessions)| {
            let judgments: Vec<_> = sessions.iter().flat_map(|s| s.judgments.iter().cloned()).collect();
            let confusion = build_confusion(&judgments, outcomes)?;
            Ok(UserTrust {
                user_id: user.to_string(),
                sessions: sessions.iter().map(|s| s.session_id.clone()).collect(),
                metrics: trust_metrics(&confusion),
                confusion,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let mean = aggregate_users(&per_user.iter().map(|u| u.metrics).collect::<Vec<_>>())?;
    Ok(TrustResults { per_user, mean })
}

pub fn phase2_verdict(trust: TrustResults, altai: Verdict, gates: &GateConfig, attempt: u32) -> PhaseResult {
    let gate = GateOutcome::evaluate(
        "mean_trust_f1",
        trust.mean.f1,
        gates.trust_f1_min,
        Comparison::AtLeast,
        "unweighted mean of per-user trust F1 >= trust_f1_min",
    );
    let mut reasons = Vec::new();
    if !gate.pass {
        reasons.push(FailReason::TrustBelowMinimum);
    }
    if !altai.pass {
        reasons.push(FailReason::AltaiBlocking);
    }
    PhaseResult {
        phase: Phase::HumanCentred,
        attempt,
        pass: reasons.is_empty(),
        reasons,
        gates: vec![gate],
        altai,
        metrics: PhaseMetrics::HumanCentred(trust),
    }
}

/// Trust measured from the complete sessions opened in the current attempt.
pub fn run_phase2(
    ctx: &StudyContext,
    state: &StudyState,
    sessions: &[TrustSession],
) -> Result<PhaseResult, PipelineError> {
    require_phase(state, Phase::HumanCentred)?;
    let eligible: Vec<&TrustSession> = sessions
        .iter()
        .filter(|s| {
            s.status == crate::trust::SessionStatus::Complete
                && s.attempt == state.attempt
                && s.study_id == state.study_id
        })
        .collect();
    if eligible.is_empty() {
        return Err(PipelineError::NoCompleteSessions);
    }
    let outcomes = case_outcomes(&ctx.model, &ctx.dataset)?;
    let trust = trust_results(&eligible, &outcomes)?;
    let altai = altai_verdict(ctx, state, Phase::HumanCentred)?;
    Ok(phase2_verdict(trust, altai, &ctx.config.gates, state.attempt))
}

/// Events recording `result` and the move it triggers. Passing advances one
/// phase (Operation recurs); failing always lands in PreEvaluation with a new
/// attempt.
pub fn transition(state: &StudyState, result: PhaseResult) -> Result<Vec<AuditEvent>, PipelineError> {
    if result.phase != state.phase || result.attempt != state.attempt {
        return Err(PipelineError::StalePhaseResult {
            result: result.phase,
            current: state.phase,
        });
    }
    let from = state.phase;
    let (to, attempt, reason) = if result.pass {
        (from.next(), state.attempt, format!("{from} passed"))
    } else {
        let reasons: Vec<String> = result
            .reasons
            .iter()
            .map(|r| {
                serde_json::to_value(r)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default()
            })
            .collect();
        (
            Phase::PreEvaluation,
            state.attempt + 1,
            format!("{from} failed: {} (failing layer: {from})", reasons.join(", ")),
        )
    };
    Ok(vec![
        AuditEvent::PhaseCompleted { result },
        AuditEvent::Transitioned {
            from,
            to,
            attempt,
            reason,
        },
    ])
}

/// Case order for a new session: the study's evaluation cases (sorted ids,
/// optionally truncated) shuffled by a seed derived from the session id.
pub fn session_cases(
    dataset: &Dataset,
    limit: Option<usize>,
    session_seed: u64,
    session_id: &str,
) -> (Vec<String>, u64) {
    let mut ids: Vec<String> = dataset.instances.iter().map(|i| i.id.clone()).collect();
    ids.sort();
    if let Some(limit) = limit {
        ids.truncate(limit);
    }
    let seed = crate::rng::derive_seed(session_seed, session_id);
    let mut rng = crate::rng::stream(seed, "shuffle");
    ids.shuffle(&mut rng);
    (ids, seed)
}

/// Re-measures accuracy and mean LLE on fresh data and compares them against
/// the baseline of the attempt that reached Operation.
pub fn run_operation_monitor(
    ctx: &StudyContext,
    state: &StudyState,
    new_dataset: &Dataset,
) -> Result<DriftReport, PipelineError> {
    require_phase(state, Phase::Operation)?;
    if new_dataset.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let (baseline_accuracy, baseline_mean_lle) = state
        .baseline()
        .ok_or_else(|| PipelineError::ConfigurationIncomplete("no baseline results in the current attempt".into()))?;
    let acc = accuracy(&ctx.model, new_dataset)?;
    let perturbation = ctx.perturbation();
    let scores = new_dataset
        .instances
        .par_iter()
        .map(|inst| {
            Ok(InstanceScore {
                instance_id: inst.id.clone(),
                score: lle_score(&ctx.model, &ctx.config.explainer, &inst.id, &inst.input, &perturbation)?,
            })
        })
        .collect::<Result<Vec<_>, MetricError>>()?;
    let lle = aggregate(scores)?;
    Ok(drift_report(
        &new_dataset.manifest.name,
        acc,
        baseline_accuracy,
        lle.mean,
        baseline_mean_lle,
        &ctx.config.gates,
    ))
}

pub fn drift_report(
    dataset: &str,
    accuracy: f64,
    baseline_accuracy: f64,
    mean_lle: f64,
    baseline_mean_lle: f64,
    gates: &GateConfig,
) -> DriftReport {
    let drop = baseline_accuracy - accuracy;
    let gates_out = vec![
        GateOutcome::evaluate(
            "accuracy_drop",
            drop,
            gates.accuracy_drift_band,
            Comparison::AtMost,
            "baseline accuracy - new accuracy <= accuracy_drift_band",
        ),
        GateOutcome::evaluate("mean_lle", mean_lle, gates.lle_gate, Comparison::AtMost, LLE_RULE),
    ];
    let drift = gates_out.iter().any(|g| !g.pass);
    DriftReport {
        dataset: dataset.to_string(),
        accuracy,
        baseline_accuracy,
        accuracy_drop: drop,
        mean_lle,
        baseline_mean_lle,
        gates: gates_out,
        drift,
        recommendation: if drift {
            "return to pre_evaluation".into()
        } else {
            "none".into()
        },
    }
}
