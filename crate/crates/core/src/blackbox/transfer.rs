use std::collections::{BTreeMap, BTreeSet};

use super::report::{SnrTransfer, TransferReport};
use super::{BlackboxError, Oracle};
use crate::attacks::{batch_attack_with, AttackMethod, AttackRecord, AttackTarget, CwConfig};
use crate::exec::Execution;
use crate::models::Differentiable;
use crate::{Frame, LabeledFrame};

/// Report plus the per-frame artifacts it was computed from.
#[derive(Debug)]
pub struct TransferOutcome {
    pub report: TransferReport,
    pub records: Vec<AttackRecord>,
    /// Victim label on each clean frame, in evaluation order.
    pub victim_clean: Vec<usize>,
    /// Victim label on each adversarial frame, in evaluation order.
    pub victim_adv: Vec<usize>,
    pub failures: Vec<(u64, String)>,
}

/// Crafts untargeted C-W examples on the surrogate and replays them on the victim.
///
/// `excluded_ids` are frames the attacker already queried; evaluation frames
/// must not overlap them. The victim is queried exactly twice per evaluation
/// frame, once clean and once adversarial. A frame whose attack errors is
/// replayed unchanged.
pub fn craft_and_transfer<S, O>(
    surrogate: &S,
    victim: &O,
    eval_frames: &[LabeledFrame],
    excluded_ids: &BTreeSet<u64>,
    cw: &CwConfig,
    high_snr_threshold: i32,
) -> Result<TransferOutcome, BlackboxError>
where
    S: Differentiable + ?Sized,
    O: Oracle + ?Sized,
{
    craft_and_transfer_with(
        surrogate,
        victim,
        eval_frames,
        excluded_ids,
        cw,
        high_snr_threshold,
        Execution::default(),
    )
}

pub fn craft_and_transfer_with<S, O>(
    surrogate: &S,
    victim: &O,
    eval_frames: &[LabeledFrame],
    excluded_ids: &BTreeSet<u64>,
    cw: &CwConfig,
    high_snr_threshold: i32,
    exec: Execution,
) -> Result<TransferOutcome, BlackboxError>
where
    S: Differentiable + ?Sized,
    O: Oracle + ?Sized,
{
    if eval_frames.is_empty() {
        return Err(BlackboxError::Config("no evaluation frames".into()));
    }
    if let Some(f) = eval_frames.iter().find(|f| excluded_ids.contains(&f.id)) {
        return Err(BlackboxError::Config(format!(
            "evaluation frame {} was also a substitute query",
            f.id
        )));
    }
    let start_count = victim.query_count();

    let victim_clean = eval_frames
        .iter()
        .map(|f| victim.query(&f.frame))
        .collect::<Result<Vec<_>, _>>()?;

    let method = AttackMethod::Cw {
        config: *cw,
        target: AttackTarget::Untargeted,
    };
    let outcome = batch_attack_with(surrogate, eval_frames, &method, exec);
    let by_id: BTreeMap<u64, &AttackRecord> =
        outcome.records.iter().map(|r| (r.frame_id, r)).collect();

    let surrogate_clean = {
        let frames: Vec<&Frame> = eval_frames.iter().map(|f| &f.frame).collect();
        surrogate.predict_labels(&frames)?
    };

    let mut victim_adv = Vec::with_capacity(eval_frames.len());
    let mut per_snr: BTreeMap<i32, SnrTransfer> = BTreeMap::new();
    for (i, f) in eval_frames.iter().enumerate() {
        let rec = by_id.get(&f.id);
        let adv_frame = rec.map_or(&f.frame, |r| &r.example.adversarial);
        let v_adv = victim.query(adv_frame)?;
        victim_adv.push(v_adv);
        let y = f.label.index();
        let (s_clean, s_adv, flipped) = match rec {
            Some(r) => (r.example.label_before, r.example.label_after, r.example.success),
            None => (surrogate_clean[i], surrogate_clean[i], false),
        };
        let e = per_snr.entry(f.snr_db).or_default();
        e.frames += 1;
        e.victim_clean_correct += (victim_clean[i] == y) as u64;
        e.victim_adv_correct += (v_adv == y) as u64;
        e.surrogate_clean_correct += (s_clean == y) as u64;
        e.surrogate_adv_correct += (s_adv == y) as u64;
        e.surrogate_flipped += flipped as u64;
        e.transferred += (flipped && v_adv != victim_clean[i]) as u64;
    }

    let report = TransferReport {
        per_snr,
        high_snr_threshold,
        substitute_queries: start_count,
        eval_queries: victim.query_count() - start_count,
        total_queries: victim.query_count(),
        attack_failures: outcome.failures.len() as u64,
        mean_l2: outcome.summary.mean_l2,
        mean_linf: outcome.summary.mean_linf,
    };
    Ok(TransferOutcome {
        report,
        records: outcome.records,
        victim_clean,
        victim_adv,
        failures: outcome
            .failures
            .into_iter()
            .map(|(id, e)| (id, e.to_string()))
            .collect(),
    })
}
