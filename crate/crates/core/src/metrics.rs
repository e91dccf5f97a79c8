//! Machine-centred metrics over (model, explainer, instance) triples:
//! robustness (bounded local Lipschitz estimate, avg/max sensitivity),
//! ground-truth fidelity, complexity and sparsity, localisation, and the
//! parameter-randomisation sanity check.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::explainers::{normalized_values, Attribution, Explain, ExplainError};
use crate::models::{Model, ModelError};
use crate::stats::{l2_distance, l2_norm, mean_std, spearman, top_k_indices};
use crate::tensor::Tensor;

pub const DEFAULT_NUM_SAMPLES: usize = 50;
/// Default radius as a multiple of the dataset-wide input standard deviation.
pub const DEFAULT_EPSILON_SCALE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("ground truth mask has no positive cells")]
    EmptyGroundTruth,
    #[error("attribution shape {attribution:?} does not match mask shape {mask:?}")]
    ShapeMismatch { attribution: Vec<usize>, mask: Vec<usize> },
    #[error("attribution is all zero")]
    AllZeroAttribution,
    #[error("k = {k} must lie in 1..={d}")]
    BadK { k: usize, d: usize },
    #[error("invalid perturbation config: {0}")]
    InvalidConfig(String),
    #[error("no scores to aggregate")]
    EmptyInput,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("csv export failed: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub epsilon: f64,
    pub num_samples: usize,
    pub seed: u64,
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(MetricError::InvalidConfig(format!(
                "epsilon must be finite and > 0, got {}",
                self.epsilon
            )));
        }
        if self.num_samples < 2 {
            return Err(MetricError::InvalidConfig("num_samples must be >= 2".into()));
        }
        Ok(())
    }

    /// Radius `DEFAULT_EPSILON_SCALE × input std` of `dataset`, falling back to
    /// `DEFAULT_EPSILON_SCALE` for constant datasets.
    pub fn for_dataset(dataset: &Dataset, num_samples: usize, seed: u64) -> Self {
        let std = dataset.input_std();
        let epsilon = if std > 0.0 {
            DEFAULT_EPSILON_SCALE * std
        } else {
            DEFAULT_EPSILON_SCALE
        };
        Self {
            epsilon,
            num_samples,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub instance_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub per_instance: Vec<InstanceScore>,
    pub mean: f64,
    pub std: f64,
}

/// Mean and population std of per-instance scores. Scores are sorted by
/// instance id first so the summary does not depend on evaluation order.
pub fn aggregate(mut scores: Vec<InstanceScore>) -> Result<MetricSummary, MetricError> {
    scores.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let (mean, std) = mean_std(&values).ok_or(MetricError::EmptyInput)?;
    Ok(MetricSummary {
        per_instance: scores,
        mean,
        std,
    })
}

/// Writes `instance_id,metric,score` rows.
pub fn write_csv<W: Write>(out: W, rows: &[(&str, &MetricSummary)]) -> Result<(), MetricError> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| MetricError::Csv(e.to_string());
    w.write_record(["instance_id", "metric", "score"]).map_err(csv_err)?;
    for (metric, summary) in rows {
        for s in &summary.per_instance {
            w.write_record([s.instance_id.as_str(), metric, &s.score.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| MetricError::Csv(e.to_string()))
}

fn gaussian_direction(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = l2_norm(&v);
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Points uniformly on the sphere of radius `epsilon` around `x`.
pub fn sphere_samples(x: &[f64], cfg: &PerturbationConfig, key: &str) -> Vec<Vec<f64>> {
    let mut rng = crate::rng::stream(cfg.seed, key);
    (0..cfg.num_samples)
        .map(|_| {
            let dir = gaussian_direction(&mut rng, x.len());
            x.iter().zip(&dir).map(|(v, u)| v + cfg.epsilon * u).collect()
        })
        .collect()
}

/// Points uniformly in the ball of radius `epsilon` around `x`.
pub fn ball_samples(x: &[f64], cfg: &PerturbationConfig, key: &str) -> Vec<Vec<f64>> {
    let mut rng = crate::rng::stream(cfg.seed, key);
    let d = x.len() as f64;
    (0..cfg.num_samples)
        .map(|_| {
            let dir = gaussian_direction(&mut rng, x.len());
            let u: f64 = rng.random();
            let r = cfg.epsilon * u.powf(1.0 / d);
            x.iter().zip(&dir).map(|(v, w)| v + r * w).collect()
        })
        .collect()
}

fn explain_at(
    model: &Model,
    explainer: &dyn Explain,
    like: &Tensor,
    point: &[f64],
    target: usize,
    key: &str,
) -> Result<Vec<f64>, MetricError> {
    let input = like
        .with_data_f64(point)
        .map_err(|e| MetricError::InvalidConfig(e.to_string()))?;
    Ok(explainer.explain(model, &input, target, key)?.values_f64())
}

fn check_shape(a: &[f64], expected: usize, shape: &[usize]) -> Result<(), MetricError> {
    if a.len() != expected {
        return Err(ExplainError::ShapeMismatch {
            expected: shape.to_vec(),
            found: vec![a.len()],
        }
        .into());
    }
    Ok(())
}

/// Bounded local Lipschitz estimate in [0, 1], 0 is most robust.
///
/// Samples lie on the sphere of radius `epsilon` around the input, so the
/// input distance is constant and only the explanation distance varies.
/// Explanations are unit-normalized, hence `‖ê(x) − ê(x')‖ ≤ 2` and the
/// halved maximum lies in [0, 1]. The explained class is the model's
/// prediction at the anchor input.
pub fn lle_score(
    model: &Model,
    explainer: &dyn Explain,
    instance_id: &str,
    input: &Tensor,
    cfg: &PerturbationConfig,
) -> Result<f64, MetricError> {
    cfg.validate()?;
    let target = model.predict(input)?.predicted_class;
    let anchor = explainer.explain(model, input, target, instance_id)?.values_f64();
    check_shape(&anchor, input.len(), input.shape())?;
    let anchor = normalized_values(&anchor);
    let x = input.to_f64();
    let mut worst = 0.0f64;
    for (j, point) in sphere_samples(&x, cfg, instance_id).iter().enumerate() {
        let key = format!("{instance_id}~{j}");
        let e = normalized_values(&explain_at(model, explainer, input, point, target, &key)?);
        worst = worst.max(l2_distance(&anchor, &e) / 2.0);
    }
    assert!(
        (0.0..=1.0 + 1e-9).contains(&worst),
        "bounded Lipschitz estimate escaped [0, 1]: {worst}"
    );
    Ok(worst.min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMode {
    Avg,
    Max,
}

/// Mean or maximum raw explanation displacement over samples drawn uniformly
/// from the ball of radius `epsilon`.
pub fn sensitivity(
    model: &Model,
    explainer: &dyn Explain,
    instance_id: &str,
    input: &Tensor,
    cfg: &PerturbationConfig,
    mode: SensitivityMode,
) -> Result<f64, MetricError> {
    let [avg, max] = sensitivity_both(model, explainer, instance_id, input, cfg)?;
    Ok(match mode {
        SensitivityMode::Avg => avg,
        SensitivityMode::Max => max,
    })
}

/// `[avg, max]` computed over one shared set of samples.
pub fn sensitivity_both(
    model: &Model,
    explainer: &dyn Explain,
    instance_id: &str,
    input: &Tensor,
    cfg: &PerturbationConfig,
) -> Result<[f64; 2], MetricError> {
    cfg.validate()?;
    let target = model.predict(input)?.predicted_class;
    let anchor = explainer.explain(model, input, target, instance_id)?.values_f64();
    check_shape(&anchor, input.len(), input.shape())?;
    let x = input.to_f64();
    let mut distances = Vec::with_capacity(cfg.num_samples);
    for (j, point) in ball_samples(&x, cfg, instance_id).iter().enumerate() {
        let key = format!("{instance_id}~{j}");
        let e = explain_at(model, explainer, input, point, target, &key)?;
        distances.push(l2_distance(&anchor, &e));
    }
    let avg = distances.iter().sum::<f64>() / distances.len() as f64;
    let max = distances.iter().copied().fold(0.0, f64::max);
    Ok([avg, max])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityRecord {
    pub f1: f64,
    pub cosine: f64,
}

fn mask_support(a: &Attribution, mask: &Tensor) -> Result<Vec<usize>, MetricError> {
    if a.values.shape() != mask.shape() {
        return Err(MetricError::ShapeMismatch {
            attribution: a.values.shape().to_vec(),
            mask: mask.shape().to_vec(),
        });
    }
    Ok(mask
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, _)| i)
        .collect())
}

/// Agreement of an attribution with a binary ground-truth mask. The predicted
/// set is the top-k cells of `|a|`, where k is the mask's support size.
pub fn fidelity_vs_gt(a: &Attribution, gt: &Tensor) -> Result<FidelityRecord, MetricError> {
    let support = mask_support(a, gt)?;
    if support.is_empty() {
        return Err(MetricError::EmptyGroundTruth);
    }
    let abs = a.abs_values();
    let k = support.len();
    let predicted = top_k_indices(&abs, k);
    let overlap = predicted.iter().filter(|i| support.binary_search(i).is_ok()).count();
    let f1 = 2.0 * overlap as f64 / (predicted.len() + k) as f64;

    let gt_values = gt.to_f64();
    let denom = l2_norm(&abs) * l2_norm(&gt_values);
    let cosine = if denom > 0.0 {
        abs.iter().zip(&gt_values).map(|(x, y)| x * y).sum::<f64>() / denom
    } else {
        0.0
    };
    Ok(FidelityRecord { f1, cosine })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRecord {
    pub entropy: f64,
    pub topk_mass: f64,
}

/// Shannon entropy of the relevance distribution `|a| / Σ|a|` and the mass of
/// its `k` largest entries.
pub fn complexity(a: &Attribution, k: usize) -> Result<ComplexityRecord, MetricError> {
    let abs = a.abs_values();
    let d = abs.len();
    if k == 0 || k > d {
        return Err(MetricError::BadK { k, d });
    }
    let total: f64 = abs.iter().sum();
    if total <= 0.0 {
        return Err(MetricError::AllZeroAttribution);
    }
    let p: Vec<f64> = abs.iter().map(|v| v / total).collect();
    let entropy = -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
    let topk_mass = top_k_indices(&p, k).iter().map(|&i| p[i]).sum::<f64>();
    Ok(ComplexityRecord {
        entropy: entropy.max(0.0),
        topk_mass: topk_mass.min(1.0),
    })
}

/// Share of absolute relevance that falls inside the region of interest.
pub fn localisation(a: &Attribution, roi: &Tensor) -> Result<f64, MetricError> {
    let inside = mask_support(a, roi)?;
    let abs = a.abs_values();
    let total: f64 = abs.iter().sum();
    if total <= 0.0 {
        return Err(MetricError::AllZeroAttribution);
    }
    Ok(inside.iter().map(|&i| abs[i]).sum::<f64>() / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomisationResult {
    pub rho_mean: f64,
    pub rho_max: f64,
    pub pass: bool,
    pub per_instance: Vec<InstanceScore>,
}

/// Compares explanations of the model against explanations of a copy whose
/// parameters were redrawn uniformly from [-1, 1]. Passes when the mean
/// Spearman correlation falls below `rho_max`, i.e. the explanations did
/// depend on the parameters.
pub fn randomisation_check(
    model: &Model,
    explainer: &dyn Explain,
    dataset: &Dataset,
    reinit_seed: u64,
    rho_max: f64,
) -> Result<RandomisationResult, MetricError> {
    if dataset.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    let randomized = model.reinitialized(reinit_seed)?;
    let mut per_instance = dataset
        .instances
        .par_iter()
        .map(|inst| {
            let target = model.predict(&inst.input)?.predicted_class;
            let original = explainer.explain(model, &inst.input, target, &inst.id)?;
            let shuffled = explainer.explain(&randomized, &inst.input, target, &inst.id)?;
            Ok(InstanceScore {
                instance_id: inst.id.clone(),
                score: spearman(&original.values_f64(), &shuffled.values_f64()),
            })
        })
        .collect::<Result<Vec<_>, MetricError>>()?;
    per_instance.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    let rho_mean = per_instance.iter().map(|s| s.score).sum::<f64>() / per_instance.len() as f64;
    Ok(RandomisationResult {
        rho_mean,
        rho_max,
        pass: rho_mean < rho_max,
        per_instance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(data: &[f32]) -> Attribution {
        Attribution {
            values: Tensor::new(vec![data.len()], data.to_vec()).unwrap(),
            target_class: 0,
            explainer_id: "t".into(),
        }
    }

    fn mask(data: &[f32]) -> Tensor {
        Tensor::new(vec![data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn fidelity_examples() {
        let r = fidelity_vs_gt(&attr(&[0.9, 0.8, 0.1, 0.0]), &mask(&[1.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(r.f1, 0.5);
        let r = fidelity_vs_gt(&attr(&[0.0, -3.0, 0.1, 2.0]), &mask(&[0.0, 1.0, 0.0, 1.0])).unwrap();
        assert_eq!(r.f1, 1.0);
        // uniform attribution: cosine = sqrt(k / d)
        let r = fidelity_vs_gt(&attr(&[1.0; 8]), &mask(&[1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])).unwrap();
        let dot: f64 = 3.0;
        let expected = dot / ((8.0f64).sqrt() * (3.0f64).sqrt());
        assert!((r.cosine - expected).abs() < 1e-12);
        assert!((r.cosine - (3.0f64 / 8.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fidelity_errors() {
        assert!(matches!(
            fidelity_vs_gt(&attr(&[1.0, 2.0]), &mask(&[0.0, 0.0])),
            Err(MetricError::EmptyGroundTruth)
        ));
        assert!(matches!(
            fidelity_vs_gt(&attr(&[1.0, 2.0]), &mask(&[0.0, 1.0, 0.0])),
            Err(MetricError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn complexity_examples() {
        let r = complexity(&attr(&[0.0, 0.0, 5.0, 0.0]), 1).unwrap();
        assert_eq!((r.entropy, r.topk_mass), (0.0, 1.0));
        let r = complexity(&attr(&[2.0; 4]), 1).unwrap();
        assert!((r.entropy - 4f64.ln()).abs() < 1e-12);
        assert!((r.topk_mass - 0.25).abs() < 1e-12);
        let r = complexity(&attr(&[3.0, 1.0]), 1).unwrap();
        let oracle = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((r.entropy - oracle).abs() < 1e-12);
        assert!((r.entropy - 0.5623).abs() < 1e-4);
        assert_eq!(r.topk_mass, 0.75);
        assert!(matches!(
            complexity(&attr(&[0.0; 3]), 1),
            Err(MetricError::AllZeroAttribution)
        ));
        assert!(matches!(complexity(&attr(&[1.0; 3]), 4), Err(MetricError::BadK { .. })));
    }

    #[test]
    fn localisation_examples() {
        let roi = mask(&[0.0, 0.0, 1.0, 1.0]);
        assert!((localisation(&attr(&[1.0, 2.0, 3.0, 4.0]), &roi).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(localisation(&attr(&[0.0, 0.0, 3.0, -4.0]), &roi).unwrap(), 1.0);
        assert_eq!(localisation(&attr(&[1.0, 2.0, 0.0, 0.0]), &roi).unwrap(), 0.0);
        assert!(matches!(
            localisation(&attr(&[0.0; 4]), &roi),
            Err(MetricError::AllZeroAttribution)
        ));
    }

    #[test]
    fn aggregate_examples() {
        let s = |id: &str, v: f64| InstanceScore {
            instance_id: id.into(),
            score: v,
        };
        let m = aggregate(vec![s("a", 0.082)]).unwrap();
        assert_eq!((m.mean, m.std), (0.082, 0.0));
        let m = aggregate(vec![s("b", 1.0), s("a", 0.0)]).unwrap();
        assert_eq!((m.mean, m.std), (0.5, 0.5));
        assert_eq!(m.per_instance[0].instance_id, "a");
        assert!(matches!(aggregate(vec![]), Err(MetricError::EmptyInput)));
    }

    #[test]
    fn sphere_and_ball_radii() {
        let cfg = PerturbationConfig {
            epsilon: 0.3,
            num_samples: 200,
            seed: 5,
        };
        let x = [1.0, -2.0, 0.5];
        for p in sphere_samples(&x, &cfg, "k") {
            assert!((l2_distance(&p, &x) - 0.3).abs() < 1e-12);
        }
        for p in ball_samples(&x, &cfg, "k") {
            assert!(l2_distance(&p, &x) <= 0.3 + 1e-12);
        }
    }

    #[test]
    fn perturbation_config_validation() {
        let bad = PerturbationConfig {
            epsilon: 0.0,
            num_samples: 10,
            seed: 0,
        };
        assert!(bad.validate().is_err());
        let bad = PerturbationConfig {
            epsilon: 0.1,
            num_samples: 1,
            seed: 0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn csv_export() {
        let summary = aggregate(vec![InstanceScore {
            instance_id: "case,1".into(),
            score: 0.25,
        }])
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &[("lle", &summary)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "instance_id,metric,score\n\"case,1\",lle,0.25\n"
        );
    }
}
