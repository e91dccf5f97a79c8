//! Class-score producers.
//!
//! Built-in models (linear, MLP) are transparent: they expose analytic input
//! gradients. External models are black boxes reached over a line-delimited
//! JSON protocol on a child process's standard streams.

mod external;

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::tensor::Tensor;

pub use external::{ExternalModel, ExternalRequest, ExternalResponse};

pub const DEFAULT_EXTERNAL_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {found} features, model expects {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("invalid model: {0}")]
    InvalidSpec(String),
    #[error("class index {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("operation requires a transparent (linear or mlp) model")]
    UnsupportedForExternal,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("external model process died{}", detail.as_deref().map(|d| format!(": {d}")).unwrap_or_default())]
    ProcessDied { detail: Option<String> },
    #[error("external model protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("external model did not answer within {0:?}")]
    Timeout(Duration),
    #[error("failed to start external model: {0}")]
    Spawn(String),
}

/// One affine layer, `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn in_width(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn out_width(&self) -> usize {
        self.weights.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    fn validate(&self) -> Result<(), ModelError> {
        let width = self.in_width();
        if self.weights.is_empty() || width == 0 {
            return Err(ModelError::InvalidSpec("empty weight matrix".into()));
        }
        if self.weights.iter().any(|row| row.len() != width) {
            return Err(ModelError::InvalidSpec("ragged weight matrix".into()));
        }
        if self.bias.len() != self.weights.len() {
            return Err(ModelError::InvalidSpec(format!(
                "bias has {} entries for {} outputs",
                self.bias.len(),
                self.weights.len()
            )));
        }
        let finite = self.weights.iter().flatten().chain(&self.bias).all(|v| v.is_finite());
        if !finite {
            return Err(ModelError::InvalidSpec("non-finite parameter".into()));
        }
        Ok(())
    }

    fn reinitialized(&self, rng: &mut impl Rng) -> Layer {
        Layer {
            weights: self
                .weights
                .iter()
                .map(|row| row.iter().map(|_| rng.random_range(-1.0..=1.0)).collect())
                .collect(),
            bias: self.bias.iter().map(|_| rng.random_range(-1.0..=1.0)).collect(),
        }
    }
}

/// Serializable model description, the document stored as `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Linear {
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
    Mlp {
        layers: Vec<Layer>,
    },
    External {
        command: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        workdir: Option<String>,
        num_classes: usize,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    DEFAULT_EXTERNAL_TIMEOUT_MS
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            ModelSpec::Linear { weights, bias } => Layer {
                weights: weights.clone(),
                bias: bias.clone(),
            }
            .validate(),
            ModelSpec::Mlp { layers } => {
                if layers.is_empty() {
                    return Err(ModelError::InvalidSpec("mlp has no layers".into()));
                }
                for layer in layers {
                    layer.validate()?;
                }
                for (i, pair) in layers.windows(2).enumerate() {
                    if pair[0].out_width() != pair[1].in_width() {
                        return Err(ModelError::InvalidSpec(format!(
                            "layer {} outputs {} values but layer {} expects {}",
                            i,
                            pair[0].out_width(),
                            i + 1,
                            pair[1].in_width()
                        )));
                    }
                }
                Ok(())
            }
            ModelSpec::External {
                command, num_classes, ..
            } => {
                if command.is_empty() {
                    return Err(ModelError::InvalidSpec("external command is empty".into()));
                }
                if *num_classes < 1 {
                    return Err(ModelError::InvalidSpec("num_classes must be positive".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub scores: Vec<f64>,
    pub predicted_class: usize,
}

impl PredictionResult {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let predicted_class = argmax(&scores);
        Self {
            scores,
            predicted_class,
        }
    }
}

/// Smallest index attaining the maximum.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// A runnable model.
#[derive(Debug)]
pub enum Model {
    Linear(Layer),
    Mlp(Vec<Layer>),
    External(ExternalModel),
}

impl Model {
    /// Validates the spec and, for external models, launches the process.
    pub fn from_spec(spec: &ModelSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        Ok(match spec {
            ModelSpec::Linear { weights, bias } => Model::Linear(Layer {
                weights: weights.clone(),
                bias: bias.clone(),
            }),
            ModelSpec::Mlp { layers } => Model::Mlp(layers.clone()),
            ModelSpec::External {
                command,
                workdir,
                num_classes,
                timeout_ms,
            } => Model::External(ExternalModel::spawn(
                command,
                workdir.as_deref(),
                *num_classes,
                Duration::from_millis(*timeout_ms),
            )?),
        })
    }

    pub fn linear(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self, ModelError> {
        Self::from_spec(&ModelSpec::Linear { weights, bias })
    }

    pub fn mlp(layers: Vec<Layer>) -> Result<Self, ModelError> {
        Self::from_spec(&ModelSpec::Mlp { layers })
    }

    /// Spec for built-in models; `None` for external ones.
    pub fn spec(&self) -> Option<ModelSpec> {
        match self {
            Model::Linear(l) => Some(ModelSpec::Linear {
                weights: l.weights.clone(),
                bias: l.bias.clone(),
            }),
            Model::Mlp(layers) => Some(ModelSpec::Mlp { layers: layers.clone() }),
            Model::External(_) => None,
        }
    }

    pub fn is_transparent(&self) -> bool {
        !matches!(self, Model::External(_))
    }

    pub fn input_width(&self) -> Option<usize> {
        match self {
            Model::Linear(l) => Some(l.in_width()),
            Model::Mlp(layers) => Some(layers[0].in_width()),
            Model::External(_) => None,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Model::Linear(l) => l.out_width(),
            Model::Mlp(layers) => layers.last().map_or(0, Layer::out_width),
            Model::External(e) => e.num_classes(),
        }
    }

    fn check_width(&self, found: usize) -> Result<(), ModelError> {
        match self.input_width() {
            Some(expected) if expected != found => Err(ModelError::ShapeMismatch { expected, found }),
            _ => Ok(()),
        }
    }

    /// Raw class scores for a flattened input.
    pub fn scores(&self, input: &Tensor) -> Result<Vec<f64>, ModelError> {
        match self {
            Model::External(ext) => ext.query(input),
            _ => self.scores_f64(&input.to_f64()),
        }
    }

    /// Forward pass in `f64` for built-in models. External models receive the
    /// values rounded to `f32` as a flat vector.
    pub fn scores_f64(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_width(x.len())?;
        match self {
            Model::Linear(layer) => Ok(layer.apply(x)),
            Model::Mlp(layers) => Ok(mlp_forward(layers, x).0),
            Model::External(ext) => {
                let t = Tensor::from_f64(vec![x.len()], x).map_err(|e| ModelError::InvalidSpec(e.to_string()))?;
                ext.query(&t)
            }
        }
    }

    pub fn predict(&self, input: &Tensor) -> Result<PredictionResult, ModelError> {
        self.scores(input).map(PredictionResult::from_scores)
    }

    /// Analytic gradient of `score[class]` with respect to the input. ReLU has
    /// subgradient 0 at exactly 0.
    pub fn gradient_f64(&self, x: &[f64], class: usize) -> Result<Vec<f64>, ModelError> {
        self.check_width(x.len())?;
        let num_classes = self.num_classes();
        if class >= num_classes {
            return Err(ModelError::ClassOutOfRange { class, num_classes });
        }
        match self {
            Model::Linear(layer) => Ok(layer.weights[class].clone()),
            Model::Mlp(layers) => {
                let (_, pre_activations) = mlp_forward(layers, x);
                // backpropagate a one-hot seed through the layers
                let mut upstream = vec![0.0; num_classes];
                upstream[class] = 1.0;
                for (idx, layer) in layers.iter().enumerate().rev() {
                    if idx + 1 < layers.len() {
                        for (g, z) in upstream.iter_mut().zip(&pre_activations[idx]) {
                            if *z <= 0.0 {
                                *g = 0.0;
                            }
                        }
                    }
                    let mut next = vec![0.0; layer.in_width()];
                    for (row, g) in layer.weights.iter().zip(&upstream) {
                        if *g == 0.0 {
                            continue;
                        }
                        for (n, w) in next.iter_mut().zip(row) {
                            *n += g * w;
                        }
                    }
                    upstream = next;
                }
                Ok(upstream)
            }
            Model::External(_) => Err(ModelError::UnsupportedForExternal),
        }
    }

    pub fn gradient(&self, input: &Tensor, class: usize) -> Result<Tensor, ModelError> {
        let g = self.gradient_f64(&input.to_f64(), class)?;
        input
            .with_data_f64(&g)
            .map_err(|e| ModelError::InvalidSpec(e.to_string()))
    }

    /// Copy with every weight and bias redrawn uniformly from [-1, 1].
    pub fn reinitialized(&self, seed: u64) -> Result<Model, ModelError> {
        let mut rng = crate::rng::stream(seed, "model-reinit");
        match self {
            Model::Linear(l) => Ok(Model::Linear(l.reinitialized(&mut rng))),
            Model::Mlp(layers) => Ok(Model::Mlp(layers.iter().map(|l| l.reinitialized(&mut rng)).collect())),
            Model::External(_) => Err(ModelError::UnsupportedForExternal),
        }
    }
}

/// Returns the output logits and the pre-activation values of every layer.
fn mlp_forward(layers: &[Layer], x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut pre = Vec::with_capacity(layers.len());
    let mut activation = x.to_vec();
    for (idx, layer) in layers.iter().enumerate() {
        let z = layer.apply(&activation);
        activation = if idx + 1 < layers.len() {
            z.iter().map(|v| v.max(0.0)).collect()
        } else {
            z.clone()
        };
        pre.push(z);
    }
    (activation, pre)
}

/// Fraction of instances whose predicted class equals the label.
pub fn accuracy(model: &Model, dataset: &Dataset) -> Result<f64, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut correct = 0usize;
    for inst in &dataset.instances {
        if model.predict(&inst.input)?.predicted_class == inst.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetManifest, Instance};

    fn t(data: &[f32]) -> Tensor {
        Tensor::new(vec![data.len()], data.to_vec()).unwrap()
    }

    fn hidden_example() -> Model {
        Model::mlp(vec![
            Layer {
                weights: vec![vec![1.0, -1.0]],
                bias: vec![0.0],
            },
            Layer {
                weights: vec![vec![1.0], vec![-1.0]],
                bias: vec![0.0, 0.0],
            },
        ])
        .unwrap()
    }

    #[test]
    fn linear_identity_and_permutation() {
        let id = Model::linear(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        let p = id.predict(&t(&[3.0, 1.0])).unwrap();
        assert_eq!((p.scores, p.predicted_class), (vec![3.0, 1.0], 0));
        let perm = Model::linear(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![0.0, 0.0]).unwrap();
        let p = perm.predict(&t(&[3.0, 1.0])).unwrap();
        assert_eq!((p.scores, p.predicted_class), (vec![1.0, 3.0], 1));
    }

    #[test]
    fn mlp_hand_forward_pass() {
        // hidden = relu(2 - 1) = 1, scores = [1, -1]
        let p = hidden_example().predict(&t(&[2.0, 1.0])).unwrap();
        assert_eq!(p.scores, vec![1.0, -1.0]);
        assert_eq!(p.predicted_class, 0);
    }

    #[test]
    fn gradients_by_hand() {
        let lin = Model::linear(vec![vec![2.0, -1.0], vec![0.5, 0.5]], vec![0.0, 1.0]).unwrap();
        assert_eq!(lin.gradient_f64(&[9.0, -4.0], 0).unwrap(), vec![2.0, -1.0]);
        assert_eq!(hidden_example().gradient_f64(&[2.0, 1.0], 0).unwrap(), vec![1.0, -1.0]);
        // hidden unit inactive (pre-activation exactly 0) -> zero gradient
        assert_eq!(hidden_example().gradient_f64(&[1.0, 1.0], 0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn shape_and_class_errors() {
        let lin = Model::linear(vec![vec![1.0, 0.0]], vec![0.0]).unwrap();
        assert!(matches!(
            lin.predict(&t(&[1.0, 2.0, 3.0])),
            Err(ModelError::ShapeMismatch { expected: 2, found: 3 })
        ));
        assert!(matches!(
            lin.gradient_f64(&[1.0, 2.0], 3),
            Err(ModelError::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn invalid_layer_chain_rejected() {
        let err = Model::mlp(vec![
            Layer {
                weights: vec![vec![1.0, 1.0]],
                bias: vec![0.0],
            },
            Layer {
                weights: vec![vec![1.0, 1.0]],
                bias: vec![0.0],
            },
        ]);
        assert!(matches!(err, Err(ModelError::InvalidSpec(_))));
    }

    fn dataset(labels: &[usize], inputs: &[[f32; 2]]) -> Dataset {
        let manifest = DatasetManifest {
            name: "acc".into(),
            num_classes: 2,
            anonymized: Some(true),
            consent_basis: String::new(),
            instances: vec![],
            class_names: None,
            generator: None,
        };
        let instances = labels
            .iter()
            .zip(inputs)
            .enumerate()
            .map(|(i, (&label, x))| Instance {
                id: format!("i{i}"),
                input: t(x),
                label,
                roi: None,
                gt_attribution: None,
            })
            .collect();
        Dataset::new(manifest, instances).unwrap()
    }

    #[test]
    fn accuracy_ratio() {
        let id = Model::linear(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        let inputs = [[1.0, 0.0], [0.0, 1.0], [2.0, 1.0], [1.0, 3.0], [5.0, 0.0]];
        assert_eq!(accuracy(&id, &dataset(&[0, 1, 0, 1, 1], &inputs)).unwrap(), 0.8);
        assert_eq!(accuracy(&id, &dataset(&[0, 1, 0, 1, 0], &inputs)).unwrap(), 1.0);
        assert!(matches!(
            accuracy(&id, &dataset(&[], &[])),
            Err(ModelError::EmptyDataset)
        ));
    }

    #[test]
    fn spec_json_shape() {
        let spec: ModelSpec = serde_json::from_str(r#"{"kind":"linear","weights":[[1,0]],"bias":[0]}"#).unwrap();
        assert!(matches!(spec, ModelSpec::Linear { .. }));
        let spec: ModelSpec =
            serde_json::from_str(r#"{"kind":"external","command":["scorer"],"num_classes":2}"#).unwrap();
        assert!(matches!(
            spec,
            ModelSpec::External {
                timeout_ms: DEFAULT_EXTERNAL_TIMEOUT_MS,
                ..
            }
        ));
    }

    #[test]
    fn reinitialized_keeps_shapes_and_is_seeded() {
        let m = hidden_example();
        let a = m.reinitialized(3).unwrap().spec().unwrap();
        let b = m.reinitialized(3).unwrap().spec().unwrap();
        assert_eq!(a, b);
        let ModelSpec::Mlp { layers } = a else { panic!() };
        assert_eq!(layers[0].weights.len(), 1);
        assert_eq!(layers[1].weights.len(), 2);
        assert!(layers
            .iter()
            .flat_map(|l| l.weights.iter().flatten())
            .all(|w| (-1.0..=1.0).contains(w)));
    }
}
