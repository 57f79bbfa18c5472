//! Small hand-written classifiers with closed-form gradients.

#![allow(dead_code)]

use rfadv::models::{Classifier, Differentiable, ModelError};
use rfadv::{Frame, FRAME_SIZE, NUM_CLASSES};

/// `z = W x + b` over the flattened frame.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Vec<Vec<f32>>,
    pub b: Vec<f32>,
}

impl Linear {
    pub fn zeros() -> Self {
        Self {
            w: vec![vec![0.0; FRAME_SIZE]; NUM_CLASSES],
            b: vec![0.0; NUM_CLASSES],
        }
    }

    fn z(&self, frame: &Frame) -> Vec<f32> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(frame.as_slice()).map(|(w, x)| w * x).sum::<f32>() + b)
            .collect()
    }
}

impl Classifier for Linear {
    fn num_classes(&self) -> usize {
        NUM_CLASSES
    }
    fn logits_batch(&self, frames: &[&Frame]) -> Result<Vec<Vec<f32>>, ModelError> {
        Ok(frames.iter().map(|f| self.z(f)).collect())
    }
}

impl Differentiable for Linear {
    fn logits_and_input_grad(
        &self,
        frame: &Frame,
        seed: &mut dyn FnMut(&[f32]) -> Vec<f32>,
    ) -> Result<(Vec<f32>, Vec<f32>), ModelError> {
        let z = self.z(frame);
        let d = seed(&z);
        let mut g = vec![0.0f32; FRAME_SIZE];
        for (row, dk) in self.w.iter().zip(&d) {
            for (gj, wj) in g.iter_mut().zip(row) {
                *gj += dk * wj;
            }
        }
        Ok((z, g))
    }
}
