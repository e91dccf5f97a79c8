//! Evaluation engine for explainable-AI systems in health settings.
//!
//! The crate covers the full evaluation loop: tensors and datasets, class-score
//! models (built-in and external), explainers, synthetic attribution
//! benchmarks, machine-centred metrics, behavioural trust measurement, the
//! seven-requirement trustworthy-AI checklist, and the phased study pipeline
//! with gates, audit log and reports.

pub mod altai;
pub mod dataset;
pub mod explainers;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod rng;
pub mod sab;
pub mod stats;
pub mod tensor;
pub mod trust;

pub use altai::{AltaiItem, AltaiRequirement, Answer, Verdict};
pub use dataset::{Dataset, DatasetManifest, Instance};
pub use explainers::{Attribution, Explain, ExplainerSpec};
pub use metrics::{MetricSummary, PerturbationConfig};
pub use models::{Model, ModelSpec, PredictionResult};
pub use pipeline::{EvaluationReport, GateConfig, Phase, PhaseResult, StudyState};
pub use tensor::Tensor;
pub use trust::{TrustConfusion, TrustJudgment, TrustMetrics, TrustSession};
