//! Synthetic attribution benchmarks: square-grid datasets with a known
//! region of evidence and a transparent linear model that uses exactly that
//! region.
//!
//! Construction, per case on an `s × s` grid:
//! - background is Gaussian noise with standard deviation `noise_std`;
//! - positives (label 1) add `pattern_amplitude` to every region cell,
//!   negatives (label 0) subtract it;
//! - `gt_attribution` and `roi` are the region mask for every case.
//!
//! The transparent model scores class 1 as `+sum(region) - M/2` and class 0
//! as `-sum(region) + M/2`, where `M = amplitude * area` is the mass a
//! positive pattern adds. Its noiseless decision threshold is `M / 2`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, DatasetManifest, Instance};
use crate::models::ModelSpec;
use crate::tensor::Tensor;

pub const GENERATOR_LABEL: &str =
    "synthetic attribution benchmark (additive square pattern, linear transparent scorer)";

#[derive(Debug, Error)]
pub enum SabError {
    #[error("region {region:?} does not fit in a {side}x{side} grid")]
    RegionOutOfBounds { region: Region, side: usize },
    #[error("invalid benchmark config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.top..self.top + self.height).contains(&row) && (self.left..self.left + self.width).contains(&col)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SabConfig {
    pub side: usize,
    pub region: Region,
    pub num_cases: usize,
    pub noise_std: f64,
    pub pattern_amplitude: f64,
    pub seed: u64,
    #[serde(default = "default_name")]
    pub name: String,
}

fn default_name() -> String {
    "sab".into()
}

impl SabConfig {
    pub fn validate(&self) -> Result<(), SabError> {
        if self.side < 4 {
            return Err(SabError::InvalidConfig(format!("side {} < 4", self.side)));
        }
        if self.num_cases < 2 {
            return Err(SabError::InvalidConfig("need at least 2 cases".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(SabError::InvalidConfig("noise_std must be finite and >= 0".into()));
        }
        if !(self.pattern_amplitude > 0.0 && self.pattern_amplitude.is_finite()) {
            return Err(SabError::InvalidConfig("pattern_amplitude must be > 0".into()));
        }
        let r = self.region;
        if r.area() == 0 || r.top + r.height > self.side || r.left + r.width > self.side {
            return Err(SabError::RegionOutOfBounds {
                region: r,
                side: self.side,
            });
        }
        Ok(())
    }

    pub fn region_mask(&self) -> Vec<f32> {
        let s = self.side;
        (0..s * s)
            .map(|i| if self.region.contains(i / s, i % s) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Case `i` is positive iff `i` is odd, giving `floor(n / 2)` positives.
pub fn case_label(index: usize) -> usize {
    index % 2
}

pub fn generate_sab(config: &SabConfig) -> Result<(Dataset, ModelSpec), SabError> {
    config.validate()?;
    let s = config.side;
    let mask = config.region_mask();
    let shape = vec![s, s];
    let mask_tensor = Tensor::new(shape.clone(), mask.clone()).expect("mask is valid");
    let noise = (config.noise_std > 0.0).then(|| Normal::new(0.0, config.noise_std).expect("std validated"));
    let width = config.num_cases.to_string().len();

    let instances = (0..config.num_cases)
        .map(|i| {
            let id = format!("case-{i:0width$}");
            let mut rng = crate::rng::stream(config.seed, &id);
            let label = case_label(i);
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let data: Vec<f64> = mask
                .iter()
                .map(|&m| {
                    let background = noise.as_ref().map_or(0.0, |n| n.sample(&mut rng));
                    background + f64::from(m) * sign * config.pattern_amplitude
                })
                .collect();
            Instance {
                input: Tensor::from_f64(shape.clone(), &data).expect("finite synthetic input"),
                id,
                label,
                roi: Some(mask_tensor.clone()),
                gt_attribution: Some(mask_tensor.clone()),
            }
        })
        .collect();

    let manifest = DatasetManifest {
        name: config.name.clone(),
        num_classes: 2,
        anonymized: Some(true),
        consent_basis: "synthetic data, no personal data".into(),
        instances: vec![],
        class_names: Some(vec!["pattern absent".into(), "pattern present".into()]),
        generator: Some(GENERATOR_LABEL.into()),
    };
    let dataset = Dataset::new(manifest, instances)?;

    let half_mass = config.pattern_amplitude * config.region.area() as f64 / 2.0;
    let positive: Vec<f64> = mask.iter().map(|&m| f64::from(m)).collect();
    let negative: Vec<f64> = positive.iter().map(|w| -w).collect();
    let model = ModelSpec::Linear {
        weights: vec![negative, positive],
        bias: vec![half_mass, -half_mass],
    };
    Ok((dataset, model))
}

/// Uniform draw helper used by tests and benches to vary configs.
pub fn random_region(side: usize, rng: &mut impl Rng) -> Region {
    let height = rng.random_range(1..=side / 2);
    let width = rng.random_range(1..=side / 2);
    Region {
        top: rng.random_range(0..=side - height),
        left: rng.random_range(0..=side - width),
        height,
        width,
    }
}
