use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;

use super::{BlackboxError, Oracle};
use crate::models::{self, ArchitectureSpec, TrainConfig, TrainedModel};
use crate::sigkit::{load_dataset, save_dataset, DatasetMeta};
use crate::{seeds, Dataset, Frame, LabeledFrame, ModulationScheme, NUM_CLASSES};

/// One query–response pair.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub frame_id: u64,
    pub snr_db: i32,
    pub frame: Frame,
    pub oracle_label: usize,
}

/// The attacker's database of oracle answers.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstituteDataset {
    pub records: Vec<QueryRecord>,
    pub budget_fraction: f64,
    pub seed: u64,
    pub victim_id: String,
    pub pool_size: usize,
    /// Set when the oracle failed part-way; `records` then holds the answers
    /// received before the failure.
    pub error: Option<String>,
}

/// Number of queries a fraction of a pool allows: `⌊fraction · pool⌋`.
pub fn budget_size(fraction: f64, pool: usize) -> usize {
    ((fraction * pool as f64) + 1e-9).floor() as usize
}

/// Picks `⌊fraction · N⌋` probe indices, stratified by SNR tag.
///
/// Each SNR group is shuffled with a seed-derived stream and its members are
/// ranked at evenly spaced positions `(r + 0.5) / size`; the overall order
/// interleaves groups by that position, and the selection is a prefix of it.
/// A larger fraction with the same seed therefore always selects a superset.
/// Returned indices are sorted.
pub fn select_probes(pool: &[LabeledFrame], fraction: f64, seed: u64) -> Vec<usize> {
    let n = budget_size(fraction, pool.len()).min(pool.len());
    let mut groups: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, f) in pool.iter().enumerate() {
        groups.entry(f.snr_db).or_default().push(i);
    }
    let mut keyed: Vec<(f64, i32, usize, usize)> = Vec::with_capacity(pool.len());
    for (snr, mut idx) in groups {
        idx.shuffle(&mut seeds::rng(seed, &[0x5B57, snr as i64 as u64]));
        let size = idx.len() as f64;
        for (r, i) in idx.into_iter().enumerate() {
            keyed.push(((r as f64 + 0.5) / size, snr, r, i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut chosen: Vec<usize> = keyed.into_iter().take(n).map(|k| k.3).collect();
    chosen.sort_unstable();
    chosen
}

/// Queries the oracle once for each selected probe frame.
///
/// Ground-truth labels in `pool` are never read. If the oracle fails, the
/// records collected so far are returned with `error` set.
pub fn collect_substitute_data<O: Oracle + ?Sized>(
    oracle: &O,
    pool: &[LabeledFrame],
    budget_fraction: f64,
    seed: u64,
    victim_id: &str,
) -> Result<SubstituteDataset, BlackboxError> {
    if pool.is_empty() {
        return Err(BlackboxError::Config("probe pool is empty".into()));
    }
    if !(budget_fraction > 0.0 && budget_fraction <= 1.0) {
        return Err(BlackboxError::Config(format!(
            "query budget fraction must be in (0, 1], got {budget_fraction}"
        )));
    }
    let mut ids = BTreeSet::new();
    if let Some(dup) = pool.iter().find(|f| !ids.insert(f.id)) {
        return Err(BlackboxError::Config(format!("duplicate frame id {} in probe pool", dup.id)));
    }
    let chosen = select_probes(pool, budget_fraction, seed);
    if chosen.is_empty() {
        return Err(BlackboxError::Config(format!(
            "budget fraction {budget_fraction} of {} frames allows no queries",
            pool.len()
        )));
    }
    let mut records = Vec::with_capacity(chosen.len());
    let mut error = None;
    for i in chosen {
        let f = &pool[i];
        match oracle.query(&f.frame) {
            Ok(label) if label < NUM_CLASSES => records.push(QueryRecord {
                frame_id: f.id,
                snr_db: f.snr_db,
                frame: f.frame.clone(),
                oracle_label: label,
            }),
            Ok(label) => {
                error = Some(format!("oracle returned label {label} for frame {}", f.id));
                break;
            }
            Err(e) => {
                error = Some(format!("frame {}: {e}", f.id));
                break;
            }
        }
    }
    if let Some(e) = &error {
        log::warn!("substitute collection stopped early: {e}");
    }
    Ok(SubstituteDataset {
        records,
        budget_fraction,
        seed,
        victim_id: victim_id.to_string(),
        pool_size: pool.len(),
        error,
    })
}

impl SubstituteDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn frame_ids(&self) -> BTreeSet<u64> {
        self.records.iter().map(|r| r.frame_id).collect()
    }

    /// The records as a dataset labelled with oracle answers.
    pub fn to_dataset(&self) -> Dataset {
        let frames = self
            .records
            .iter()
            .map(|r| LabeledFrame {
                id: r.frame_id,
                frame: r.frame.clone(),
                label: ModulationScheme::from_index(r.oracle_label).expect("validated label"),
                snr_db: r.snr_db,
            })
            .collect();
        let mut attributes = BTreeMap::new();
        attributes.insert("kind".into(), "substitute".into());
        attributes.insert("substitute.budget_fraction".into(), self.budget_fraction.to_string());
        attributes.insert("substitute.seed".into(), self.seed.to_string());
        attributes.insert("substitute.victim".into(), self.victim_id.clone());
        attributes.insert("substitute.pool_size".into(), self.pool_size.to_string());
        if let Some(e) = &self.error {
            attributes.insert("substitute.error".into(), e.replace('\n', " "));
        }
        Dataset::new(
            frames,
            DatasetMeta {
                generator: None,
                attributes,
            },
        )
    }

    /// Saves in the dataset file format with oracle labels in the label field.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BlackboxError> {
        Ok(save_dataset(&self.to_dataset(), path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BlackboxError> {
        let ds = load_dataset(path)?;
        let attr = |k: &str| {
            ds.meta
                .attributes
                .get(k)
                .cloned()
                .ok_or_else(|| BlackboxError::Config(format!("substitute file lacks {k}")))
        };
        let parse_err = |k: &str| BlackboxError::Config(format!("bad {k} in substitute file"));
        Ok(Self {
            budget_fraction: attr("substitute.budget_fraction")?
                .parse()
                .map_err(|_| parse_err("budget_fraction"))?,
            seed: attr("substitute.seed")?.parse().map_err(|_| parse_err("seed"))?,
            victim_id: attr("substitute.victim")?,
            pool_size: attr("substitute.pool_size")?
                .parse()
                .map_err(|_| parse_err("pool_size"))?,
            error: ds.meta.attributes.get("substitute.error").cloned(),
            records: ds
                .frames
                .into_iter()
                .map(|f| QueryRecord {
                    frame_id: f.id,
                    snr_db: f.snr_db,
                    frame: f.frame,
                    oracle_label: f.label.index(),
                })
                .collect(),
        })
    }

    /// Trains a surrogate on the oracle labels.
    pub fn train_surrogate(
        &self,
        spec: ArchitectureSpec,
        init_seed: u64,
        config: &TrainConfig,
    ) -> Result<TrainedModel, BlackboxError> {
        if self.records.len() < NUM_CLASSES {
            return Err(BlackboxError::Config(format!(
                "substitute database has {} records, at least {NUM_CLASSES} needed",
                self.records.len()
            )));
        }
        let classes: BTreeSet<usize> = self.records.iter().map(|r| r.oracle_label).collect();
        if classes.len() < 2 {
            return Err(BlackboxError::Config(
                "substitute database covers a single class; a surrogate would be constant".into(),
            ));
        }
        let model = TrainedModel::build(spec, init_seed)?;
        Ok(models::train(model, &self.to_dataset(), config)?)
    }
}

/// Trains a surrogate of architecture `spec` on a substitute database.
pub fn train_surrogate(
    substitute: &SubstituteDataset,
    spec: ArchitectureSpec,
    init_seed: u64,
    config: &TrainConfig,
) -> Result<TrainedModel, BlackboxError> {
    substitute.train_surrogate(spec, init_seed, config)
}
