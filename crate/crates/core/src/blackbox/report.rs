use std::collections::BTreeMap;

use crate::numfmt::sig9;

/// Transfer counts for one group of evaluation frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SnrTransfer {
    pub frames: u64,
    pub victim_clean_correct: u64,
    pub victim_adv_correct: u64,
    pub surrogate_clean_correct: u64,
    pub surrogate_adv_correct: u64,
    /// Frames whose surrogate label the attack changed.
    pub surrogate_flipped: u64,
    /// Of those, frames whose victim label also changed.
    pub transferred: u64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl SnrTransfer {
    pub fn add(&mut self, o: &SnrTransfer) {
        self.frames += o.frames;
        self.victim_clean_correct += o.victim_clean_correct;
        self.victim_adv_correct += o.victim_adv_correct;
        self.surrogate_clean_correct += o.surrogate_clean_correct;
        self.surrogate_adv_correct += o.surrogate_adv_correct;
        self.surrogate_flipped += o.surrogate_flipped;
        self.transferred += o.transferred;
    }

    pub fn victim_clean_accuracy(&self) -> f64 {
        ratio(self.victim_clean_correct, self.frames)
    }

    pub fn victim_adv_accuracy(&self) -> f64 {
        ratio(self.victim_adv_correct, self.frames)
    }

    pub fn surrogate_clean_accuracy(&self) -> f64 {
        ratio(self.surrogate_clean_correct, self.frames)
    }

    pub fn surrogate_adv_accuracy(&self) -> f64 {
        ratio(self.surrogate_adv_correct, self.frames)
    }

    /// Share of surrogate-fooling examples that also changed the victim's label;
    /// 0 when nothing fooled the surrogate.
    pub fn transfer_rate(&self) -> f64 {
        ratio(self.transferred, self.surrogate_flipped)
    }

    /// Clean minus adversarial victim accuracy, as a fraction.
    pub fn drop(&self) -> f64 {
        self.victim_clean_accuracy() - self.victim_adv_accuracy()
    }

    /// Drop divided by clean accuracy; 0 when clean accuracy is 0.
    pub fn relative_drop(&self) -> f64 {
        let clean = self.victim_clean_accuracy();
        if clean == 0.0 {
            0.0
        } else {
            self.drop() / clean
        }
    }
}

pub const TRANSFER_CSV_HEADER: &str =
    "snr,clean_acc,adv_acc,drop,transfer_rate,surrogate_clean_acc,surrogate_adv_acc,frames";

/// Outcome of replaying surrogate-crafted examples against the victim.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub per_snr: BTreeMap<i32, SnrTransfer>,
    /// SNR at or above which frames count toward [`TransferReport::high_snr`].
    pub high_snr_threshold: i32,
    pub substitute_queries: u64,
    /// Victim queries spent on evaluation (clean plus adversarial).
    pub eval_queries: u64,
    /// Oracle counter after the campaign.
    pub total_queries: u64,
    /// Frames whose attack raised an error (their clean frame stands in as the
    /// adversarial one).
    pub attack_failures: u64,
    pub mean_l2: f64,
    pub mean_linf: f64,
}

impl TransferReport {
    pub fn overall(&self) -> SnrTransfer {
        self.pooled(|_| true)
    }

    pub fn high_snr(&self) -> SnrTransfer {
        let t = self.high_snr_threshold;
        self.pooled(|s| s >= t)
    }

    pub fn pooled(&self, keep: impl Fn(i32) -> bool) -> SnrTransfer {
        let mut acc = SnrTransfer::default();
        for (_, s) in self.per_snr.iter().filter(|(s, _)| keep(**s)) {
            acc.add(s);
        }
        acc
    }

    /// Per-SNR table. Every rate is printed with 9 significant digits, and the
    /// drop column is the difference of the printed clean and adversarial
    /// values so the file is self-consistent.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRANSFER_CSV_HEADER}\n");
        for (snr, s) in &self.per_snr {
            let clean = sig9(s.victim_clean_accuracy());
            let adv = sig9(s.victim_adv_accuracy());
            let drop = clean.parse::<f64>().unwrap_or(0.0) - adv.parse::<f64>().unwrap_or(0.0);
            out.push_str(&format!(
                "{snr},{clean},{adv},{},{},{},{},{}\n",
                sig9(drop),
                sig9(s.transfer_rate()),
                sig9(s.surrogate_clean_accuracy()),
                sig9(s.surrogate_adv_accuracy()),
                s.frames
            ));
        }
        out
    }

    fn group_json(name: &str, s: &SnrTransfer, indent: &str) -> String {
        format!(
            "{indent}\"{name}\": {{\"frames\": {}, \"victim_clean_accuracy\": {}, \"victim_adversarial_accuracy\": {}, \"drop_percentage_points\": {}, \"relative_drop\": {}, \"transfer_rate\": {}, \"surrogate_clean_accuracy\": {}, \"surrogate_adversarial_accuracy\": {}}}",
            s.frames,
            sig9(s.victim_clean_accuracy()),
            sig9(s.victim_adv_accuracy()),
            sig9(100.0 * s.drop()),
            sig9(s.relative_drop()),
            sig9(s.transfer_rate()),
            sig9(s.surrogate_clean_accuracy()),
            sig9(s.surrogate_adv_accuracy()),
        )
    }

    /// JSON summary: query accounting, pooled results, and per-SNR rows.
    pub fn to_json(&self, extra: &BTreeMap<String, String>) -> String {
        let mut lines = vec![
            format!("  \"substitute_queries\": {}", self.substitute_queries),
            format!("  \"eval_queries\": {}", self.eval_queries),
            format!("  \"total_queries\": {}", self.total_queries),
            format!("  \"attack_failures\": {}", self.attack_failures),
            format!("  \"mean_l2\": {}", sig9(self.mean_l2)),
            format!("  \"mean_linf\": {}", sig9(self.mean_linf)),
            format!("  \"high_snr_threshold\": {}", self.high_snr_threshold),
            Self::group_json("overall", &self.overall(), "  "),
            Self::group_json("high_snr", &self.high_snr(), "  "),
        ];
        for (k, v) in extra {
            lines.push(format!("  {}: {}", crate::numfmt::json_string(k), crate::numfmt::json_string(v)));
        }
        let rows: Vec<String> = self
            .per_snr
            .iter()
            .map(|(snr, s)| Self::group_json(&snr.to_string(), s, "    "))
            .collect();
        lines.push(format!("  \"per_snr\": {{\n{}\n  }}", rows.join(",\n")));
        format!("{{\n{}\n}}\n", lines.join(",\n"))
    }
}
