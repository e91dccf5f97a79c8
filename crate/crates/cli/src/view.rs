use serde::{Deserialize, Serialize};
use xaihealth_core::explainers::{threshold_attribution, ExplainError};
use xaihealth_core::pipeline::StudyContext;
use xaihealth_core::{Explain, Instance, Tensor};

pub const AI_DISCLOSURE: &str =
    "You are interacting with an AI system. The prediction and the highlighted explanation were produced by software, not by a clinician.";

/// What a rater sees for one case. Carries no label and no correctness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseView {
    pub case_id: String,
    pub position: usize,
    pub total: usize,
    pub input: Vec<Vec<f64>>,
    pub overlay: Vec<Vec<f64>>,
    pub prediction: String,
    pub keep_fraction: f64,
    pub ai_disclosure: String,
}

/// Rows for display: 2-D tensors as they are, 1-D as a single row, higher
/// ranks with all leading dimensions folded into rows.
fn rows(values: &[f64], shape: &[usize]) -> Vec<Vec<f64>> {
    let width = match shape.len() {
        0 => 1,
        _ => shape[shape.len() - 1].max(1),
    };
    values.chunks(width).map(<[f64]>::to_vec).collect()
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

fn unit_abs(values: &[f64]) -> Vec<f64> {
    let hi = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if hi > 0.0 {
        values.iter().map(|v| v.abs() / hi).collect()
    } else {
        vec![0.0; values.len()]
    }
}

#[derive(Debug)]
pub enum RenderError {
    Model(xaihealth_core::models::ModelError),
    Explain(ExplainError),
}

impl std::fmt::Display for RenderError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RenderError::Model(e) => e.fmt(f),
            RenderError::Explain(e) => e.fmt(f),
        }
    }
}

pub fn render_case(
    ctx: &StudyContext,
    instance: &Instance,
    position: usize,
    total: usize,
    keep_fraction: f64,
) -> Result<CaseView, RenderError> {
    let input: &Tensor = &instance.input;
    let predicted = ctx.model.predict(input).map_err(RenderError::Model)?.predicted_class;
    let attribution = ctx
        .config
        .explainer
        .explain(&ctx.model, input, predicted, &instance.id)
        .map_err(RenderError::Explain)?;
    let kept = threshold_attribution(&attribution, keep_fraction).map_err(RenderError::Explain)?;
    Ok(CaseView {
        case_id: instance.id.clone(),
        position,
        total,
        input: rows(&min_max(&input.to_f64()), input.shape()),
        overlay: rows(&unit_abs(&kept.values_f64()), input.shape()),
        prediction: ctx.dataset.manifest.class_name(predicted),
        keep_fraction,
        ai_disclosure: AI_DISCLOSURE.into(),
    })
}
