use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::models::Classifier;
use crate::Frame;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct OracleError(pub String);

/// Label-only query interface to a deployed classifier.
pub trait Oracle: Sync {
    /// Returns the predicted class of `frame` and counts one query.
    fn query(&self, frame: &Frame) -> Result<usize, OracleError>;

    /// Number of queries answered so far.
    fn query_count(&self) -> u64;
}

/// Wraps a classifier so that only its labels are reachable.
///
/// The wrapped model is private and there is no accessor, so code holding an
/// oracle cannot read logits, probabilities, parameters or gradients.
pub struct ModelOracle<C> {
    model: C,
    count: AtomicU64,
}

impl<C: Classifier> ModelOracle<C> {
    pub fn new(model: C) -> Self {
        Self {
            model,
            count: AtomicU64::new(0),
        }
    }
}

impl<C: Classifier> Oracle for ModelOracle<C> {
    fn query(&self, frame: &Frame) -> Result<usize, OracleError> {
        self.count.fetch_add(1, Ordering::SeqCst);
        self.model
            .predict_label(frame)
            .map_err(|e| OracleError(e.to_string()))
    }

    fn query_count(&self) -> u64 {
        self.count.load(Ordering::SeqCst)
    }
}

impl<O: Oracle + ?Sized> Oracle for &O {
    fn query(&self, frame: &Frame) -> Result<usize, OracleError> {
        (**self).query(frame)
    }

    fn query_count(&self) -> u64 {
        (**self).query_count()
    }
}
