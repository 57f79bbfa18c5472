use std::collections::BTreeMap;

use super::{Classifier, ModelError};
use crate::exec::Execution;
use crate::numfmt::{json_string, sig9};
use crate::{Dataset, Frame, ModulationScheme, NUM_CLASSES};

const EVAL_CHUNK: usize = 64;

/// Accuracy summary of one classifier on one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalReport {
    /// `confusion[true][predicted]` counts.
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
    /// `(correct, total)` per SNR tag.
    pub per_snr: BTreeMap<i32, (u64, u64)>,
}

impl Default for EvalReport {
    fn default() -> Self {
        Self {
            confusion: [[0; NUM_CLASSES]; NUM_CLASSES],
            per_snr: BTreeMap::new(),
        }
    }
}

impl EvalReport {
    /// Builds a report from ground truth and predictions, frame by frame.
    pub fn from_predictions(dataset: &Dataset, predicted: &[usize]) -> Self {
        assert_eq!(dataset.len(), predicted.len(), "one prediction per frame");
        let mut r = Self::default();
        for (f, &p) in dataset.frames.iter().zip(predicted) {
            let y = f.label.index();
            r.confusion[y][p] += 1;
            let e = r.per_snr.entry(f.snr_db).or_insert((0, 0));
            e.0 += (y == p) as u64;
            e.1 += 1;
        }
        r
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.confusion[i][i]).sum()
    }

    /// Overall accuracy; 0 for an empty report.
    pub fn accuracy(&self) -> f64 {
        ratio(self.correct(), self.total())
    }

    pub fn snr_accuracy(&self, snr_db: i32) -> Option<f64> {
        self.per_snr.get(&snr_db).map(|&(c, t)| ratio(c, t))
    }

    /// Pooled accuracy over frames whose SNR satisfies `keep`.
    pub fn accuracy_where(&self, keep: impl Fn(i32) -> bool) -> f64 {
        let (c, t) = self
            .per_snr
            .iter()
            .filter(|(s, _)| keep(**s))
            .fold((0, 0), |(c, t), (_, &(ci, ti))| (c + ci, t + ti));
        ratio(c, t)
    }

    /// Per-class example counts (confusion row sums).
    pub fn class_counts(&self) -> [u64; NUM_CLASSES] {
        let mut out = [0; NUM_CLASSES];
        for (o, row) in out.iter_mut().zip(&self.confusion) {
            *o = row.iter().sum();
        }
        out
    }

    /// `snr,accuracy` rows in ascending SNR order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("snr,accuracy\n");
        for (&snr, &(c, t)) in &self.per_snr {
            out.push_str(&format!("{snr},{}\n", sig9(ratio(c, t))));
        }
        out
    }

    /// JSON summary with overall and per-SNR accuracy and the full confusion matrix.
    pub fn to_json(&self) -> String {
        let classes: Vec<String> = ModulationScheme::ALL
            .iter()
            .map(|m| json_string(m.name()))
            .collect();
        let per_snr: Vec<String> = self
            .per_snr
            .iter()
            .map(|(&s, &(c, t))| {
                format!(
                    "    {{\"snr\": {s}, \"correct\": {c}, \"total\": {t}, \"accuracy\": {}}}",
                    sig9(ratio(c, t))
                )
            })
            .collect();
        let rows: Vec<String> = self
            .confusion
            .iter()
            .map(|row| {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                format!("    [{}]", cells.join(", "))
            })
            .collect();
        format!(
            "{{\n  \"total\": {},\n  \"correct\": {},\n  \"accuracy\": {},\n  \"classes\": [{}],\n  \"per_snr\": [\n{}\n  ],\n  \"confusion\": [\n{}\n  ]\n}}\n",
            self.total(),
            self.correct(),
            sig9(self.accuracy()),
            classes.join(", "),
            per_snr.join(",\n"),
            rows.join(",\n")
        )
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Evaluates `model` on every frame of `dataset`.
pub fn evaluate<C: Classifier + ?Sized>(model: &C, dataset: &Dataset) -> Result<EvalReport, ModelError> {
    evaluate_with(model, dataset, Execution::default())
}

pub fn evaluate_with<C: Classifier + ?Sized>(
    model: &C,
    dataset: &Dataset,
    exec: Execution,
) -> Result<EvalReport, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let frames: Vec<&Frame> = dataset.frames.iter().map(|f| &f.frame).collect();
    let chunks: Vec<&[&Frame]> = frames.chunks(EVAL_CHUNK).collect();
    let labels = exec.map_slice(&chunks, |_, chunk| model.predict_labels(chunk));
    let mut predicted = Vec::with_capacity(dataset.len());
    for l in labels {
        predicted.extend(l?);
    }
    Ok(EvalReport::from_predictions(dataset, &predicted))
}
