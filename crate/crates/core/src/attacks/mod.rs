//! Adversarial example crafting: FGSM and the Carlini–Wagner L2 attack.
//!
//! Both attacks work on any [`Differentiable`](crate::models::Differentiable)
//! classifier and keep every adversarial frame inside a box `[lo, hi]`, usually
//! the global value range of the dataset the frame came from.

mod batch;
mod cw;
mod fgsm;
mod io;

use thiserror::Error;

use crate::models::{argmax, Classifier, ModelError};
use crate::{Frame, FRAME_SIZE, NUM_CLASSES};

pub use batch::{batch_attack, batch_attack_with, AttackMethod, AttackRecord, BatchOutcome, BatchSummary};
pub use cw::{cw_attack, CwConfig};
pub use fgsm::{fgsm, FgsmConfig};
pub use io::{save_adversarial_batch, write_summary_csv, SUMMARY_CSV_HEADER};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error("input frame has entries outside the box [{lo}, {hi}]")]
    OutsideBox { lo: f32, hi: f32 },
    #[error("non-finite {what} (c = {c}, iteration {iteration})")]
    NonFinite { what: &'static str, c: f64, iteration: usize },
}

/// Inclusive per-entry bounds for adversarial frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxBounds {
    pub lo: f32,
    pub hi: f32,
}

impl BoxBounds {
    pub fn new(lo: f32, hi: f32) -> Result<Self, AttackError> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(AttackError::Config(format!(
                "box bounds need lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, frame: &Frame) -> bool {
        frame.as_slice().iter().all(|&v| v >= self.lo && v <= self.hi)
    }

    /// Box spanning a dataset's global value range.
    pub fn from_dataset(dataset: &crate::Dataset) -> Result<Self, AttackError> {
        let (lo, hi) = dataset
            .value_range()
            .ok_or_else(|| AttackError::Config("empty dataset has no value range".into()))?;
        Self::new(lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackTarget {
    /// Any label other than the model's label on the clean frame.
    Untargeted,
    Targeted(usize),
}

impl AttackTarget {
    pub fn validate(&self) -> Result<(), AttackError> {
        match *self {
            AttackTarget::Targeted(t) if t >= NUM_CLASSES => Err(AttackError::Config(format!(
                "target class {t} out of range"
            ))),
            _ => Ok(()),
        }
    }

    /// Whether moving from `before` to `after` achieves this goal.
    pub fn is_met(&self, before: usize, after: usize) -> bool {
        match *self {
            AttackTarget::Untargeted => after != before,
            AttackTarget::Targeted(t) => after == t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L2,
    Linf,
}

/// Norm of a perturbation over all 256 entries.
pub fn perturbation_norm(eta: &Frame, p: Norm) -> f64 {
    norm_of(eta.as_slice(), p)
}

pub(crate) fn norm_of(v: &[f32], p: Norm) -> f64 {
    match p {
        Norm::L2 => v.iter().map(|&e| (e as f64) * (e as f64)).sum::<f64>().sqrt(),
        Norm::Linf => v.iter().fold(0.0f64, |m, &e| m.max((e as f64).abs())),
    }
}

/// One attack result. `adversarial == original + perturbation` holds exactly
/// in `f32` arithmetic, and `success` is derived from the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialExample {
    pub original: Frame,
    pub adversarial: Frame,
    pub perturbation: Frame,
    pub l2_norm: f64,
    pub linf_norm: f64,
    pub label_before: usize,
    pub label_after: usize,
    pub target: AttackTarget,
    pub success: bool,
}

impl AdversarialExample {
    /// Assembles an example from a candidate adversarial frame, relabelling
    /// both frames with `model`.
    ///
    /// The perturbation is `candidate - original`; when that difference does
    /// not reproduce the candidate exactly it is nudged one ulp at a time
    /// toward zero until `original + perturbation` is representable and in the box.
    pub fn assemble<C: Classifier + ?Sized>(
        model: &C,
        original: &Frame,
        candidate: &Frame,
        bounds: BoxBounds,
        target: AttackTarget,
        label_before: Option<usize>,
    ) -> Result<Self, AttackError> {
        let mut eta = vec![0.0f32; FRAME_SIZE];
        let mut adv = vec![0.0f32; FRAME_SIZE];
        for ((e, a), (&x, &c)) in eta
            .iter_mut()
            .zip(adv.iter_mut())
            .zip(original.as_slice().iter().zip(candidate.as_slice()))
        {
            let mut d = c - x;
            let mut s = x + d;
            while s < bounds.lo || s > bounds.hi {
                d = toward_zero(d);
                s = x + d;
            }
            *e = d;
            *a = s;
        }
        let adversarial = Frame::new(adv).map_err(|e| AttackError::Config(e.to_string()))?;
        let perturbation = Frame::new(eta).map_err(|e| AttackError::Config(e.to_string()))?;
        let label_before = match label_before {
            Some(l) => l,
            None => model.predict_label(original)?,
        };
        let label_after = argmax(&model.logits(&adversarial)?);
        Ok(Self {
            l2_norm: perturbation_norm(&perturbation, Norm::L2),
            linf_norm: perturbation_norm(&perturbation, Norm::Linf),
            original: original.clone(),
            adversarial,
            perturbation,
            label_before,
            label_after,
            target,
            success: target.is_met(label_before, label_after),
        })
    }

    /// Checks the stored redundancies: exact reconstruction, norms, success flag.
    pub fn is_consistent(&self) -> bool {
        let exact = self
            .original
            .as_slice()
            .iter()
            .zip(self.perturbation.as_slice())
            .zip(self.adversarial.as_slice())
            .all(|((&x, &e), &a)| (x + e).to_bits() == a.to_bits());
        exact
            && (perturbation_norm(&self.perturbation, Norm::L2) - self.l2_norm).abs() <= 1e-6
            && (perturbation_norm(&self.perturbation, Norm::Linf) - self.linf_norm).abs() <= 1e-6
            && self.success == self.target.is_met(self.label_before, self.label_after)
    }
}

fn toward_zero(d: f32) -> f32 {
    if d == 0.0 {
        0.0
    } else {
        f32::from_bits(d.to_bits() - 1)
    }
}
