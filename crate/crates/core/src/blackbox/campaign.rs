use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;

use super::substitute::{collect_substitute_data, SubstituteDataset};
use super::transfer::{craft_and_transfer, TransferOutcome};
use super::{BlackboxError, Oracle, TransferReport};
use crate::attacks::{save_adversarial_batch, write_summary_csv, BoxBounds, CwConfig};
use crate::models::{ArchitectureSpec, EpochStats, Family, TrainConfig, TrainedModel};
use crate::{seeds, Dataset, LabeledFrame, ModulationScheme};

/// Files written by [`run_campaign`] into its output directory.
pub const CAMPAIGN_FILES: [&str; 7] = [
    "substitute.iqds",
    "surrogate.ntar",
    "surrogate_history.csv",
    "adversarial.iqds",
    "adversarial.csv",
    "transfer.csv",
    "summary.json",
];

/// Default C-W margin for campaigns. The query-limited surrogate agrees with
/// the victim on only about a third of frames, so minimal-margin examples
/// rarely transfer; a large margin trades perturbation size for transfer.
pub const DEFAULT_CONFIDENCE: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    /// Share of the test partition the attacker may query, in (0, 1].
    pub query_budget_fraction: f64,
    /// Test share used to partition the dataset; must match the victim's training split.
    pub test_fraction: f64,
    pub split_seed: u64,
    /// Seeds probe sampling, evaluation sampling and surrogate initialization.
    pub seed: u64,
    pub surrogate: ArchitectureSpec,
    pub surrogate_train: TrainConfig,
    pub cw: CwConfig,
    /// At most this many evaluation frames per (class, SNR) cell.
    pub eval_per_cell: Option<usize>,
    pub high_snr_threshold: i32,
    pub victim_id: String,
}

impl CampaignConfig {
    pub fn new(bounds: BoxBounds) -> Self {
        Self {
            query_budget_fraction: 0.10,
            test_fraction: 0.5,
            split_seed: 0,
            seed: 0,
            surrogate: ArchitectureSpec::default_for(Family::Mlp),
            surrogate_train: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
            cw: CwConfig {
                confidence: DEFAULT_CONFIDENCE,
                ..CwConfig::new(bounds)
            },
            eval_per_cell: Some(5),
            high_snr_threshold: 10,
            victim_id: "victim".into(),
        }
    }

    pub fn validate(&self) -> Result<(), BlackboxError> {
        if !(self.query_budget_fraction > 0.0 && self.query_budget_fraction <= 1.0) {
            return Err(BlackboxError::Config(format!(
                "query_budget_fraction must be in (0, 1], got {}",
                self.query_budget_fraction
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(BlackboxError::Config(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.eval_per_cell == Some(0) {
            return Err(BlackboxError::Config("eval_per_cell must be at least 1".into()));
        }
        self.surrogate.validate()?;
        self.surrogate_train.validate()?;
        self.cw.validate()?;
        Ok(())
    }
}

#[derive(Debug)]
pub struct CampaignOutcome {
    pub report: TransferReport,
    pub substitute: SubstituteDataset,
    pub surrogate: TrainedModel,
    pub transfer: TransferOutcome,
}

/// Picks evaluation frames: test frames the attacker did not query, at most
/// `cap` per (class, SNR) cell, in dataset order.
fn evaluation_frames(
    test: &Dataset,
    substitute: &SubstituteDataset,
    cap: Option<usize>,
    seed: u64,
) -> Vec<LabeledFrame> {
    let queried = substitute.frame_ids();
    let mut cells: BTreeMap<(ModulationScheme, i32), Vec<usize>> = BTreeMap::new();
    for (i, f) in test.frames.iter().enumerate() {
        if !queried.contains(&f.id) {
            cells.entry((f.label, f.snr_db)).or_default().push(i);
        }
    }
    let mut keep = Vec::new();
    for ((label, snr), mut idx) in cells {
        if let Some(k) = cap {
            if idx.len() > k {
                idx.shuffle(&mut seeds::rng(seed, &[0xE7A1, label.index() as u64, snr as i64 as u64]));
                idx.truncate(k);
            }
        }
        keep.extend(idx);
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| test.frames[i].clone()).collect()
}

/// Runs the full campaign against `victim`.
///
/// Steps: partition `dataset` and take the test part as the probe pool, query
/// the budgeted probes, train the surrogate on the answers, attack held-out
/// test frames on the surrogate, and replay them on the victim. Artifacts are
/// written to `out_dir` when given.
pub fn run_campaign<O: Oracle + ?Sized>(
    victim: &O,
    dataset: &Dataset,
    config: &CampaignConfig,
    out_dir: Option<&Path>,
) -> Result<CampaignOutcome, BlackboxError> {
    config.validate().map_err(BlackboxError::at("config"))?;
    let (_, test) = dataset
        .split(config.test_fraction, config.split_seed)
        .map_err(|e| BlackboxError::at("split")(e.into()))?;

    let substitute = collect_substitute_data(
        victim,
        &test.frames,
        config.query_budget_fraction,
        config.seed,
        &config.victim_id,
    )
    .map_err(BlackboxError::at("query"))?;
    if let Some(e) = &substitute.error {
        return Err(BlackboxError::at("query")(BlackboxError::Config(format!(
            "oracle failed after {} answers: {e}",
            substitute.len()
        ))));
    }
    log::info!(
        "collected {} oracle answers from a pool of {}",
        substitute.len(),
        test.len()
    );

    let mut surrogate_cfg = config.surrogate_train.clone();
    surrogate_cfg.seed = seeds::derive(config.seed, &[0x5A77]);
    let surrogate = substitute
        .train_surrogate(config.surrogate.clone(), config.seed, &surrogate_cfg)
        .map_err(BlackboxError::at("surrogate"))?;

    let eval = evaluation_frames(&test, &substitute, config.eval_per_cell, config.seed);
    log::info!("attacking {} evaluation frames", eval.len());
    let transfer = craft_and_transfer(
        &surrogate,
        victim,
        &eval,
        &substitute.frame_ids(),
        &config.cw,
        config.high_snr_threshold,
    )
    .map_err(BlackboxError::at("transfer"))?;
    let report = transfer.report.clone();

    if let Some(dir) = out_dir {
        persist(dir, config, &substitute, &surrogate, &transfer)
            .map_err(BlackboxError::at("persist"))?;
    }
    Ok(CampaignOutcome {
        report,
        substitute,
        surrogate,
        transfer,
    })
}

fn persist(
    dir: &Path,
    config: &CampaignConfig,
    substitute: &SubstituteDataset,
    surrogate: &TrainedModel,
    transfer: &TransferOutcome,
) -> Result<(), BlackboxError> {
    std::fs::create_dir_all(dir)?;
    substitute.save(dir.join(CAMPAIGN_FILES[0]))?;
    surrogate.save_checkpoint(dir.join(CAMPAIGN_FILES[1]))?;
    std::fs::write(dir.join(CAMPAIGN_FILES[2]), EpochStats::history_csv(&surrogate.history))?;

    let cw = &config.cw;
    let mut attrs = BTreeMap::new();
    attrs.insert("kind".into(), "adversarial".into());
    attrs.insert("attack".into(), "cw-l2-untargeted".into());
    attrs.insert("attack.box".into(), format!("{} {}", cw.bounds.lo, cw.bounds.hi));
    attrs.insert("attack.confidence".into(), cw.confidence.to_string());
    attrs.insert("attack.initial_c".into(), cw.initial_c.to_string());
    attrs.insert("attack.max_iterations".into(), cw.max_iterations.to_string());
    attrs.insert("attack.binary_search_steps".into(), cw.binary_search_steps.to_string());
    attrs.insert("attack.learning_rate".into(), cw.learning_rate.to_string());
    save_adversarial_batch(&transfer.records, attrs.clone(), dir.join(CAMPAIGN_FILES[3]))?;
    let mut csv = Vec::new();
    write_summary_csv(&transfer.records, &mut csv)?;
    std::fs::write(dir.join(CAMPAIGN_FILES[4]), csv)?;
    std::fs::write(dir.join(CAMPAIGN_FILES[5]), transfer.report.to_csv())?;

    let mut extra = attrs;
    extra.remove("kind");
    extra.insert("victim".into(), config.victim_id.clone());
    extra.insert("query_budget_fraction".into(), config.query_budget_fraction.to_string());
    extra.insert("substitute_records".into(), substitute.len().to_string());
    extra.insert("surrogate".into(), config.surrogate.describe());
    std::fs::write(dir.join(CAMPAIGN_FILES[6]), transfer.report.to_json(&extra))?;
    Ok(())
}
