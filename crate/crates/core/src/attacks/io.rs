use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::AttackRecord;
use crate::numfmt::sig9;
use crate::sigkit::{save_dataset, DatasetMeta, SigError};
use crate::{Dataset, LabeledFrame};

pub const SUMMARY_CSV_HEADER: &str = "frame_id,label_before,label_after,l2,linf,success";

/// Per-example CSV with labels as class indices.
pub fn write_summary_csv<W: Write>(records: &[AttackRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SUMMARY_CSV_HEADER}")?;
    for r in records {
        let e = &r.example;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.frame_id,
            e.label_before,
            e.label_after,
            sig9(e.l2_norm),
            sig9(e.linf_norm),
            e.success
        )?;
    }
    Ok(())
}

/// Stores the adversarial frames as a dataset file; each record keeps the
/// source frame's id, ground-truth label and SNR.
pub fn save_adversarial_batch(
    records: &[AttackRecord],
    attributes: BTreeMap<String, String>,
    path: impl AsRef<Path>,
) -> Result<(), SigError> {
    let frames = records
        .iter()
        .map(|r| LabeledFrame {
            id: r.frame_id,
            frame: r.example.adversarial.clone(),
            label: r.true_label,
            snr_db: r.snr_db,
        })
        .collect();
    let ds = Dataset::new(
        frames,
        DatasetMeta {
            generator: None,
            attributes,
        },
    );
    save_dataset(&ds, path)
}
