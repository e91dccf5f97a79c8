//! Dense row-major `f32` tensors and the XTN1 binary file format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "XTN1" | ndim: u32 | dim_0 .. dim_{ndim-1}: u32 | values: f32 * product(dims)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"XTN1";

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("bad magic: expected \"XTN1\"")]
    BadMagic,
    #[error("truncated data: header implies {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("non-finite value at flat index {index}")]
    NonFiniteValue { index: usize },
    #[error("shape {shape:?} implies {expected} values, got {found}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("tensor shape must have at least one dimension and no zero-sized dimensions, got {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// A dense tensor. Values are always finite and `data.len() == product(shape)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor", into = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = TensorError;
    fn try_from(raw: RawTensor) -> Result<Self, Self::Error> {
        Tensor::new(raw.shape, raw.data)
    }
}

impl From<Tensor> for RawTensor {
    fn from(t: Tensor) -> Self {
        RawTensor {
            shape: t.shape,
            data: t.data,
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::InvalidShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch {
                shape,
                expected,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteValue { index });
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor from `f64` values, rounding to `f32`.
    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self, TensorError> {
        Self::new(shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Result<Self, TensorError> {
        let len = shape.iter().product();
        Self::new(shape, vec![value; len])
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::filled(shape, 0.0)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    /// Same shape, new values. Fails if any value is non-finite.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(self.shape.clone(), data)
    }

    pub fn with_data_f64(&self, data: &[f64]) -> Result<Self, TensorError> {
        Self::from_f64(self.shape.clone(), data)
    }

    /// True when every value is exactly 0.0 or 1.0.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_tensor(self)
    }

    pub fn write_to(&self, path: &Path) -> Result<(), TensorError> {
        fs::write(path, self.encode()).map_err(|e| TensorError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read_from(path: &Path) -> Result<Self, TensorError> {
        let bytes = fs::read(path).map_err(|e| TensorError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        decode_tensor(&bytes)
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.shape.len() + 4 * t.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
    for &dim in &t.shape {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, TensorError> {
    let magic_len = bytes.len().min(4);
    if bytes[..magic_len] != MAGIC[..magic_len] {
        return Err(TensorError::BadMagic);
    }
    let read_u32 = |offset: usize| -> Option<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    };
    let ndim = read_u32(4).ok_or(TensorError::TruncatedData {
        expected: 8,
        found: bytes.len(),
    })? as usize;
    let header_len = 8 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(TensorError::TruncatedData {
            expected: header_len,
            found: bytes.len(),
        });
    }
    let shape: Vec<usize> = (0..ndim)
        .map(|i| read_u32(8 + 4 * i).unwrap_or_default() as usize)
        .collect();
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape));
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorError::InvalidShape(shape.clone()))?;
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(header_len))
        .ok_or_else(|| TensorError::InvalidShape(shape.clone()))?;
    if bytes.len() != expected {
        return Err(TensorError::TruncatedData {
            expected,
            found: bytes.len(),
        });
    }
    let data: Vec<f32> = bytes[header_len..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}
