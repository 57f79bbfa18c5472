//! Classifier families: the CNN and LSTM victims and the fully connected
//! surrogate, with training, evaluation and checkpointing.
//!
//! Every model maps a 2×128 frame to 11 logits. The [`Classifier`] trait is the
//! label/logit view used by evaluation and oracles; [`Differentiable`] adds the
//! input-gradient access that white-box attacks need.

mod eval;
mod network;
mod spec;
mod train;

use thiserror::Error;

use crate::sigkit::SigError;
use crate::tensor::TensorError;
use crate::Frame;

pub use eval::{evaluate, evaluate_with, EvalReport};
pub use network::{TrainedModel, CHECKPOINT_FAMILY_KEY};
pub use spec::{ArchitectureSpec, CnnSpec, Family, LstmSpec, MlpSpec};
pub use train::{train, train_split, train_split_with, EpochStats, TrainConfig};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] SigError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite gradient at epoch {epoch}, batch {batch}")]
    NonFiniteGradient { epoch: usize, batch: usize },
    #[error("checkpoint architecture mismatch: expected {expected}, checkpoint holds {found}")]
    SpecMismatch { expected: String, found: String },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Anything that maps frames to class logits.
pub trait Classifier: Sync {
    fn num_classes(&self) -> usize;

    /// Logits for each frame, in order. A frame's logits do not depend on the
    /// other frames in the batch.
    fn logits_batch(&self, frames: &[&Frame]) -> Result<Vec<Vec<f32>>, ModelError>;

    fn logits(&self, frame: &Frame) -> Result<Vec<f32>, ModelError> {
        Ok(self.logits_batch(&[frame])?.pop().expect("one row per frame"))
    }

    /// Argmax of the logits, lowest index on ties.
    fn predict_label(&self, frame: &Frame) -> Result<usize, ModelError> {
        Ok(argmax(&self.logits(frame)?))
    }

    fn predict_labels(&self, frames: &[&Frame]) -> Result<Vec<usize>, ModelError> {
        Ok(self.logits_batch(frames)?.iter().map(|z| argmax(z)).collect())
    }

    /// Softmax of the logits.
    fn probabilities(&self, frame: &Frame) -> Result<Vec<f32>, ModelError> {
        let z = self.logits(frame)?;
        Ok(crate::tensor::softmax(&z))
    }
}

/// Classifiers that expose gradients with respect to their input.
pub trait Differentiable: Classifier {
    /// Computes the logits `z` of `frame`, asks `seed` for the upstream
    /// gradient `∂L/∂z`, and returns `(z, ∂L/∂x)` with `∂L/∂x` laid out like the frame.
    fn logits_and_input_grad(
        &self,
        frame: &Frame,
        seed: &mut dyn FnMut(&[f32]) -> Vec<f32>,
    ) -> Result<(Vec<f32>, Vec<f32>), ModelError>;
}
