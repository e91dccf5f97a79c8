//! Explainers produce per-feature relevance (attributions) for one prediction.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{Model, ModelError};
use crate::stats::{l2_norm, top_k_indices};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("occlusion patch size {patch} exceeds input dimension {dim}")]
    PatchTooLarge { patch: usize, dim: usize },
    #[error("occlusion patch size must be at least 1")]
    ZeroPatch,
    #[error("keep fraction must lie in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("explainer produced attribution of shape {found:?} for input {expected:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub values: Tensor,
    pub target_class: usize,
    pub explainer_id: String,
}

/// Sidecar record written next to an attribution's XTN1 file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub instance_id: String,
    pub target_class: usize,
    pub explainer_id: String,
}

impl Attribution {
    pub fn record(&self, instance_id: &str) -> AttributionRecord {
        AttributionRecord {
            instance_id: instance_id.to_string(),
            target_class: self.target_class,
            explainer_id: self.explainer_id.clone(),
        }
    }

    pub fn values_f64(&self) -> Vec<f64> {
        self.values.to_f64()
    }

    pub fn abs_values(&self) -> Vec<f64> {
        self.values.data().iter().map(|v| f64::from(v.abs())).collect()
    }
}

/// Anything that can explain a prediction. `instance_id` keys deterministic
/// randomness; callers explaining perturbed copies pass a derived id.
pub trait Explain: Sync {
    fn id(&self) -> String;

    fn explain(
        &self,
        model: &Model,
        input: &Tensor,
        target_class: usize,
        instance_id: &str,
    ) -> Result<Attribution, ExplainError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExplainerSpec {
    GradientInput,
    Occlusion {
        patch: usize,
        #[serde(default)]
        baseline: f32,
    },
    Constant {
        fill: f32,
    },
    Random {
        seed: u64,
    },
}

impl Explain for ExplainerSpec {
    fn id(&self) -> String {
        match self {
            ExplainerSpec::GradientInput => "gradient_input".into(),
            ExplainerSpec::Occlusion { patch, baseline } => format!("occlusion(patch={patch},baseline={baseline})"),
            ExplainerSpec::Constant { fill } => format!("constant({fill})"),
            ExplainerSpec::Random { seed } => format!("random(seed={seed})"),
        }
    }

    fn explain(
        &self,
        model: &Model,
        input: &Tensor,
        target_class: usize,
        instance_id: &str,
    ) -> Result<Attribution, ExplainError> {
        let values = match self {
            ExplainerSpec::GradientInput => {
                let x = input.to_f64();
                let grad = model.gradient_f64(&x, target_class)?;
                let prod: Vec<f64> = grad.iter().zip(&x).map(|(g, v)| g * v).collect();
                input.with_data_f64(&prod)?
            }
            ExplainerSpec::Occlusion { patch, baseline } => occlusion(model, input, target_class, *patch, *baseline)?,
            ExplainerSpec::Constant { fill } => Tensor::filled(input.shape().to_vec(), *fill)?,
            ExplainerSpec::Random { seed } => {
                let mut rng = crate::rng::stream(*seed, instance_id);
                let data = (0..input.len()).map(|_| rng.random::<f32>()).collect();
                input.with_data(data)?
            }
        };
        Ok(Attribution {
            values,
            target_class,
            explainer_id: self.id(),
        })
    }
}

/// Flat-index groups of the hyper-rectangular tiles of side `patch` covering
/// `shape`. Edge tiles are truncated.
pub fn patch_tiles(shape: &[usize], patch: usize) -> Vec<Vec<usize>> {
    let tiles_per_dim: Vec<usize> = shape.iter().map(|d| d.div_ceil(patch)).collect();
    let strides: Vec<usize> = (0..shape.len()).map(|i| shape[i + 1..].iter().product()).collect();
    let total: usize = tiles_per_dim.iter().product();
    let mut out = Vec::with_capacity(total);
    for tile in 0..total {
        // tile multi-index, row-major over the tile grid
        let mut rem = tile;
        let mut origin = vec![0; shape.len()];
        for d in (0..shape.len()).rev() {
            origin[d] = (rem % tiles_per_dim[d]) * patch;
            rem /= tiles_per_dim[d];
        }
        let mut cells = vec![0usize];
        for d in 0..shape.len() {
            let end = (origin[d] + patch).min(shape[d]);
            let stride = strides[d];
            cells = cells
                .iter()
                .flat_map(|&base| (origin[d]..end).map(move |c| base + c * stride))
                .collect();
        }
        out.push(cells);
    }
    out
}

fn occlusion(
    model: &Model,
    input: &Tensor,
    target_class: usize,
    patch: usize,
    baseline: f32,
) -> Result<Tensor, ExplainError> {
    if patch == 0 {
        return Err(ExplainError::ZeroPatch);
    }
    if let Some(&dim) = input.shape().iter().find(|&&d| patch > d) {
        return Err(ExplainError::PatchTooLarge { patch, dim });
    }
    let num_classes = model.num_classes();
    if target_class >= num_classes {
        return Err(ModelError::ClassOutOfRange {
            class: target_class,
            num_classes,
        }
        .into());
    }
    let reference = model.scores(input)?[target_class];
    let mut values = vec![0.0f64; input.len()];
    let mut masked = input.data().to_vec();
    for cells in patch_tiles(input.shape(), patch) {
        for &c in &cells {
            masked[c] = baseline;
        }
        let score = model.scores(&input.with_data(masked.clone())?)?[target_class];
        for &c in &cells {
            values[c] = reference - score;
            masked[c] = input.data()[c];
        }
    }
    Ok(input.with_data_f64(&values)?)
}

/// Divides by the Euclidean norm; near-zero attributions become all zeros.
pub fn normalize_attribution(a: &Attribution) -> Attribution {
    let values = normalized_values(&a.values_f64());
    Attribution {
        values: a.values.with_data_f64(&values).expect("normalized values are finite"),
        target_class: a.target_class,
        explainer_id: a.explainer_id.clone(),
    }
}

pub(crate) fn normalized_values(values: &[f64]) -> Vec<f64> {
    let norm = l2_norm(values);
    if norm < 1e-12 {
        vec![0.0; values.len()]
    } else {
        values.iter().map(|v| v / norm).collect()
    }
}

/// Keeps the top `ceil(keep_fraction * d)` cells by absolute value (lower flat
/// index wins ties) and zeroes the rest.
pub fn threshold_attribution(a: &Attribution, keep_fraction: f64) -> Result<Attribution, ExplainError> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(ExplainError::BadFraction(keep_fraction));
    }
    let d = a.values.len();
    let keep = ((keep_fraction * d as f64).ceil() as usize).clamp(1, d);
    let kept = top_k_indices(&a.abs_values(), keep);
    let mut data = vec![0.0f32; d];
    for i in kept {
        data[i] = a.values.data()[i];
    }
    Ok(Attribution {
        values: a.values.with_data(data)?,
        target_class: a.target_class,
        explainer_id: a.explainer_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Layer;

    fn t(data: &[f32]) -> Tensor {
        Tensor::new(vec![data.len()], data.to_vec()).unwrap()
    }

    fn attr(data: &[f32]) -> Attribution {
        Attribution {
            values: t(data),
            target_class: 0,
            explainer_id: "test".into(),
        }
    }

    fn lin() -> Model {
        Model::linear(vec![vec![2.0, -1.0], vec![0.0, 1.0]], vec![0.5, 0.0]).unwrap()
    }

    #[test]
    fn gradient_input_is_weight_times_input() {
        let a = ExplainerSpec::GradientInput
            .explain(&lin(), &t(&[3.0, 1.0]), 0, "x")
            .unwrap();
        assert_eq!(a.values.data(), &[6.0, -1.0]);
        assert_eq!(a.explainer_id, "gradient_input");
    }

    #[test]
    fn occlusion_patch_one_matches_score_drop() {
        let spec = ExplainerSpec::Occlusion {
            patch: 1,
            baseline: 0.0,
        };
        let a = spec.explain(&lin(), &t(&[3.0, 1.0]), 0, "x").unwrap();
        assert_eq!(a.values.data(), &[6.0, -1.0]);
    }

    #[test]
    fn occlusion_writes_drop_to_whole_patch() {
        let m = Model::linear(vec![vec![1.0; 6]], vec![0.0]).unwrap();
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let a = ExplainerSpec::Occlusion {
            patch: 2,
            baseline: 0.0,
        }
        .explain(&m, &x, 0, "x")
        .unwrap();
        // tiles: {0,1,3,4} drop 12, {2,5} drop 9
        assert_eq!(a.values.data(), &[12.0, 12.0, 9.0, 12.0, 12.0, 9.0]);
    }

    #[test]
    fn occlusion_patch_too_large() {
        let spec = ExplainerSpec::Occlusion {
            patch: 3,
            baseline: 0.0,
        };
        assert!(matches!(
            spec.explain(&lin(), &t(&[3.0, 1.0]), 0, "x"),
            Err(ExplainError::PatchTooLarge { patch: 3, dim: 2 })
        ));
    }

    #[test]
    fn constant_and_random() {
        let x = t(&[1.0, 2.0, 3.0, 4.0]);
        let m = Model::linear(vec![vec![0.0; 4]], vec![0.0]).unwrap();
        let a = ExplainerSpec::Constant { fill: 0.5 }.explain(&m, &x, 0, "x").unwrap();
        assert_eq!(a.values.data(), &[0.5; 4]);
        let r = ExplainerSpec::Random { seed: 4 };
        let a1 = r.explain(&m, &x, 0, "case-1").unwrap();
        let a2 = r.explain(&m, &x, 0, "case-1").unwrap();
        let b = r.explain(&m, &x, 0, "case-2").unwrap();
        assert_eq!(a1, a2);
        assert_ne!(a1.values, b.values);
        assert!(a1.values.data().iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn gradient_input_checks_input_width() {
        let m = Model::mlp(vec![Layer {
            weights: vec![vec![1.0, 1.0]],
            bias: vec![0.0],
        }])
        .unwrap();
        assert!(ExplainerSpec::GradientInput
            .explain(&m, &t(&[1.0, 2.0, 3.0]), 0, "x")
            .is_err());
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_attribution(&attr(&[3.0, 4.0])).values.data(), &[0.6, 0.8]);
        assert_eq!(normalize_attribution(&attr(&[0.0, 0.0])).values.data(), &[0.0, 0.0]);
    }

    #[test]
    fn thresholding() {
        let a = attr(&[5.0, 1.0, 3.0, 2.0]);
        assert_eq!(
            threshold_attribution(&a, 0.5).unwrap().values.data(),
            &[5.0, 0.0, 3.0, 0.0]
        );
        assert_eq!(threshold_attribution(&a, 1.0).unwrap(), a);
        assert_eq!(
            threshold_attribution(&attr(&[1.0; 4]), 0.25).unwrap().values.data(),
            &[1.0, 0.0, 0.0, 0.0]
        );
        assert!(matches!(
            threshold_attribution(&a, 0.0),
            Err(ExplainError::BadFraction(_))
        ));
        assert!(matches!(
            threshold_attribution(&a, 1.5),
            Err(ExplainError::BadFraction(_))
        ));
        assert_eq!(
            threshold_attribution(&attr(&[-5.0, 1.0, 3.0, 2.0]), 0.25)
                .unwrap()
                .values
                .data(),
            &[-5.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn tiles_cover_every_cell_once() {
        let tiles = patch_tiles(&[3, 5, 2], 2);
        let mut all: Vec<usize> = tiles.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
    }
}
