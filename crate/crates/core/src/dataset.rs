//! Dataset manifests: a JSON document listing instances whose tensors live in
//! separate XTN1 files referenced by path relative to the manifest.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file {path}")]
    MissingFile { path: String },
    #[error("manifest is not valid JSON: {0}")]
    Parse(String),
    #[error("instance {instance}: {source}")]
    Tensor {
        instance: String,
        #[source]
        source: TensorError,
    },
    #[error("instance {instance}: {field} shape {found:?} does not match input shape {expected:?}")]
    ShapeMismatch {
        instance: String,
        field: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("instance {instance}: label {label} out of range for {num_classes} classes")]
    LabelOutOfRange {
        instance: String,
        label: usize,
        num_classes: usize,
    },
    #[error("instance {instance}: {field} must contain only 0.0 or 1.0")]
    NotBinaryMask { instance: String, field: &'static str },
    #[error("manifest lacks the `anonymized` attestation field")]
    MissingAttestation,
    #[error("num_classes must be at least 2, got {0}")]
    TooFewClasses(usize),
    #[error("duplicate instance id {0}")]
    DuplicateId(String),
    #[error("dataset has no instances")]
    Empty,
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// One manifest entry as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRef {
    pub id: String,
    pub input: String,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_attribution: Option<String>,
}

/// Manifest document. `anonymized` is optional at the parsing level so that
/// its absence can be reported as [`DatasetError::MissingAttestation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub num_classes: usize,
    #[serde(default)]
    pub anonymized: Option<bool>,
    #[serde(default)]
    pub consent_basis: String,
    pub instances: Vec<InstanceRef>,
    /// Display names per class; defaults to "class <i>".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    /// Free-text provenance, e.g. which generator produced the data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

impl DatasetManifest {
    /// Either anonymized data or a stated legal basis for processing.
    pub fn attestation_present(&self) -> bool {
        self.anonymized == Some(true) || !self.consent_basis.trim().is_empty()
    }

    pub fn class_name(&self, class: usize) -> String {
        self.class_names
            .as_ref()
            .and_then(|names| names.get(class).cloned())
            .unwrap_or_else(|| format!("class {class}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub input: Tensor,
    pub label: usize,
    pub roi: Option<Tensor>,
    pub gt_attribution: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub instances: Vec<Instance>,
}

impl Dataset {
    /// Validates an in-memory dataset against every manifest invariant.
    pub fn new(manifest: DatasetManifest, instances: Vec<Instance>) -> Result<Self, DatasetError> {
        if manifest.anonymized.is_none() {
            return Err(DatasetError::MissingAttestation);
        }
        if manifest.num_classes < 2 {
            return Err(DatasetError::TooFewClasses(manifest.num_classes));
        }
        let mut seen = HashSet::new();
        let shape = instances.first().map(|i| i.input.shape().to_vec());
        for inst in &instances {
            if !seen.insert(inst.id.as_str()) {
                return Err(DatasetError::DuplicateId(inst.id.clone()));
            }
            if inst.label >= manifest.num_classes {
                return Err(DatasetError::LabelOutOfRange {
                    instance: inst.id.clone(),
                    label: inst.label,
                    num_classes: manifest.num_classes,
                });
            }
            if let Some(shape) = &shape {
                if inst.input.shape() != shape.as_slice() {
                    return Err(DatasetError::ShapeMismatch {
                        instance: inst.id.clone(),
                        field: "input",
                        expected: shape.clone(),
                        found: inst.input.shape().to_vec(),
                    });
                }
            }
            for (field, mask) in [("roi", &inst.roi), ("gt_attribution", &inst.gt_attribution)] {
                let Some(mask) = mask else { continue };
                if mask.shape() != inst.input.shape() {
                    return Err(DatasetError::ShapeMismatch {
                        instance: inst.id.clone(),
                        field,
                        expected: inst.input.shape().to_vec(),
                        found: mask.shape().to_vec(),
                    });
                }
                if !mask.is_binary() {
                    return Err(DatasetError::NotBinaryMask {
                        instance: inst.id.clone(),
                        field,
                    });
                }
            }
        }
        Ok(Self { manifest, instances })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn input_shape(&self) -> Option<&[usize]> {
        self.instances.first().map(|i| i.input.shape())
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    /// Population standard deviation over every input value in the dataset.
    pub fn input_std(&self) -> f64 {
        let values: Vec<f64> = self.instances.iter().flat_map(|i| i.input.to_f64()).collect();
        crate::stats::mean_std(&values).map_or(0.0, |(_, std)| std)
    }

    /// Writes the manifest to `dir/manifest.json` and each tensor under
    /// `dir/tensors/`. Returns the manifest path.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf, DatasetError> {
        let io_err = |path: &Path, e: std::io::Error| DatasetError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let tensor_dir = dir.join("tensors");
        fs::create_dir_all(&tensor_dir).map_err(|e| io_err(&tensor_dir, e))?;
        let mut manifest = self.manifest.clone();
        manifest.instances.clear();
        for inst in &self.instances {
            let write = |suffix: &str, t: &Tensor| -> Result<String, DatasetError> {
                let rel = format!("tensors/{}.{}.xtn", inst.id, suffix);
                t.write_to(&dir.join(&rel)).map_err(|source| DatasetError::Tensor {
                    instance: inst.id.clone(),
                    source,
                })?;
                Ok(rel)
            };
            let input = write("input", &inst.input)?;
            let roi = inst.roi.as_ref().map(|t| write("roi", t)).transpose()?;
            let gt = inst.gt_attribution.as_ref().map(|t| write("gt", t)).transpose()?;
            manifest.instances.push(InstanceRef {
                id: inst.id.clone(),
                input,
                label: inst.label,
                roi,
                gt_attribution: gt,
            });
        }
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}

/// Parses a manifest document and resolves tensor paths relative to `base_dir`.
pub fn load_dataset_from_str(document: &str, base_dir: &Path) -> Result<Dataset, DatasetError> {
    let value: serde_json::Value = serde_json::from_str(document).map_err(|e| DatasetError::Parse(e.to_string()))?;
    if value.get("anonymized").is_none_or(|v| v.is_null()) {
        return Err(DatasetError::MissingAttestation);
    }
    let manifest: DatasetManifest = serde_json::from_value(value).map_err(|e| DatasetError::Parse(e.to_string()))?;
    let load = |id: &str, rel: &str| -> Result<Tensor, DatasetError> {
        let path = base_dir.join(rel);
        if !path.is_file() {
            return Err(DatasetError::MissingFile {
                path: path.display().to_string(),
            });
        }
        Tensor::read_from(&path).map_err(|source| DatasetError::Tensor {
            instance: id.to_string(),
            source,
        })
    };
    let instances = manifest
        .instances
        .iter()
        .map(|r| {
            Ok(Instance {
                id: r.id.clone(),
                input: load(&r.id, &r.input)?,
                label: r.label,
                roi: r.roi.as_deref().map(|p| load(&r.id, p)).transpose()?,
                gt_attribution: r.gt_attribution.as_deref().map(|p| load(&r.id, p)).transpose()?,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    Dataset::new(manifest, instances)
}

/// Loads `manifest.json` (or the given file) and every tensor it references.
pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let manifest_path = if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    };
    let document = fs::read_to_string(&manifest_path).map_err(|_| DatasetError::MissingFile {
        path: manifest_path.display().to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    load_dataset_from_str(&document, base)
}
