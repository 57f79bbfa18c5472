use super::{AdversarialExample, AttackError, AttackTarget, BoxBounds};
use crate::models::{argmax, Differentiable};
use crate::tensor::softmax;
use crate::{Frame, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FgsmConfig {
    /// L∞ step size in input units.
    pub epsilon: f32,
    pub bounds: BoxBounds,
}

impl FgsmConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(AttackError::Config(format!(
                "epsilon must be finite and non-negative, got {}",
                self.epsilon
            )));
        }
        self.bounds.validate()
    }
}

/// Single signed-gradient step on the cross-entropy of `true_label`, clipped to the box.
pub fn fgsm<M: Differentiable + ?Sized>(
    model: &M,
    x: &Frame,
    true_label: usize,
    config: &FgsmConfig,
) -> Result<AdversarialExample, AttackError> {
    config.validate()?;
    if true_label >= NUM_CLASSES {
        return Err(AttackError::Config(format!("label {true_label} out of range")));
    }
    let mut clean_logits = Vec::new();
    let (_, grad) = model.logits_and_input_grad(x, &mut |z| {
        clean_logits = z.to_vec();
        let mut d = softmax(z);
        d[true_label] -= 1.0;
        d
    })?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(AttackError::NonFinite {
            what: "input gradient",
            c: 0.0,
            iteration: 0,
        });
    }
    let BoxBounds { lo, hi } = config.bounds;
    let eps = config.epsilon;
    let adv: Vec<f32> = x
        .as_slice()
        .iter()
        .zip(&grad)
        .map(|(&v, &g)| {
            let step = if g > 0.0 {
                eps
            } else if g < 0.0 {
                -eps
            } else {
                0.0
            };
            (v + step).clamp(lo, hi)
        })
        .collect();
    let candidate = Frame::new(adv).map_err(|e| AttackError::Config(e.to_string()))?;
    AdversarialExample::assemble(
        model,
        x,
        &candidate,
        config.bounds,
        AttackTarget::Untargeted,
        Some(argmax(&clean_logits)),
    )
}
