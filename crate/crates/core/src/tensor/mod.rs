//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s; calling
//! [`Tape::backward`] on a scalar replays the tape in reverse and returns
//! gradients for every leaf marked as differentiable, which may include the
//! network input as well as parameters.
//!
//! Compute is 32-bit. Tapes are single-threaded; independent tapes can run on
//! different threads against the same borrowed parameters.

mod archive;
pub mod init;
mod kernels;
mod optim;
mod params;
mod tape;

use thiserror::Error;

pub use archive::{NamedTensorArchive, ARCHIVE_MAGIC, ARCHIVE_VERSION};
pub use optim::{Optimizer, OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::{ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("not a tensor archive (bad magic bytes)")]
    ArchiveMagic,
    #[error("unsupported archive version {found} (expected {expected})")]
    ArchiveVersion { found: u16, expected: u16 },
    #[error("archive truncated: {0}")]
    ArchiveTruncated(String),
    #[error("archive checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ArchiveChecksum { stored: u32, computed: u32 },
    #[error("malformed archive: {0}")]
    ArchiveMalformed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(op: &'static str, expected: impl Into<String>, actual: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        expected: expected.into(),
        actual: format!("{actual:?}"),
    }
}

/// Dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::Shape {
                op: "tensor",
                expected: format!("{n} elements for shape {shape:?}"),
                actual: format!("{} elements", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], v: f32) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    /// 0-dimensional tensor.
    pub fn scalar(v: f32) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn from_slice(shape: &[usize], data: &[f32]) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), data.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), self.data.clone())
    }
}

/// Numerically stable softmax of one logit vector.
pub fn softmax(z: &[f32]) -> Vec<f32> {
    tape::softmax_rows(z, z.len().max(1))
}
