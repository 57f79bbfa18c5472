use super::{cw_attack, fgsm, AdversarialExample, AttackError, AttackTarget, CwConfig, FgsmConfig};
use crate::exec::Execution;
use crate::models::Differentiable;
use crate::{LabeledFrame, ModulationScheme};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackMethod {
    /// Uses each frame's ground-truth label for the loss.
    Fgsm(FgsmConfig),
    Cw { config: CwConfig, target: AttackTarget },
}

/// An attacked frame with the dataset context it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackRecord {
    pub frame_id: u64,
    pub true_label: ModulationScheme,
    pub snr_db: i32,
    pub example: AdversarialExample,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchSummary {
    /// Frames that produced an example (failed frames are excluded).
    pub attempted: usize,
    pub succeeded: usize,
    pub success_rate: f64,
    pub mean_l2: f64,
    pub mean_linf: f64,
    /// Mean L2 over successful examples only; 0 when none succeeded.
    pub mean_l2_successful: f64,
}

impl BatchSummary {
    pub fn from_records(records: &[AttackRecord]) -> Self {
        let n = records.len();
        if n == 0 {
            return Self::default();
        }
        let succ: Vec<&AttackRecord> = records.iter().filter(|r| r.example.success).collect();
        let mean = |it: &mut dyn Iterator<Item = f64>, k: usize| {
            if k == 0 {
                0.0
            } else {
                it.sum::<f64>() / k as f64
            }
        };
        Self {
            attempted: n,
            succeeded: succ.len(),
            success_rate: succ.len() as f64 / n as f64,
            mean_l2: mean(&mut records.iter().map(|r| r.example.l2_norm), n),
            mean_linf: mean(&mut records.iter().map(|r| r.example.linf_norm), n),
            mean_l2_successful: mean(&mut succ.iter().map(|r| r.example.l2_norm), succ.len()),
        }
    }
}

#[derive(Debug)]
pub struct BatchOutcome {
    pub records: Vec<AttackRecord>,
    /// Frames whose attack raised an error, with the error.
    pub failures: Vec<(u64, AttackError)>,
    pub summary: BatchSummary,
}

/// Attacks every frame independently; errors are collected per frame.
pub fn batch_attack<M: Differentiable + ?Sized>(
    model: &M,
    frames: &[LabeledFrame],
    method: &AttackMethod,
) -> BatchOutcome {
    batch_attack_with(model, frames, method, Execution::default())
}

pub fn batch_attack_with<M: Differentiable + ?Sized>(
    model: &M,
    frames: &[LabeledFrame],
    method: &AttackMethod,
    exec: Execution,
) -> BatchOutcome {
    let results = exec.map_slice(frames, |_, f| match method {
        AttackMethod::Fgsm(cfg) => fgsm(model, &f.frame, f.label.index(), cfg),
        AttackMethod::Cw { config, target } => cw_attack(model, &f.frame, *target, config),
    });
    let mut records = Vec::with_capacity(frames.len());
    let mut failures = Vec::new();
    for (f, r) in frames.iter().zip(results) {
        match r {
            Ok(example) => records.push(AttackRecord {
                frame_id: f.id,
                true_label: f.label,
                snr_db: f.snr_db,
                example,
            }),
            Err(e) => {
                log::warn!("attack on frame {} failed: {e}", f.id);
                failures.push((f.id, e));
            }
        }
    }
    let summary = BatchSummary::from_records(&records);
    BatchOutcome {
        records,
        failures,
        summary,
    }
}
