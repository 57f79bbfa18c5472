//! The four pipeline stages. Each reads its inputs from and writes its
//! outputs under the run directory:
//!
//! ```text
//! <out>/dataset.iqds
//! <out>/<family>/victim.ntar, victim_eval.csv, victim_eval.json, victim_history.csv
//! <out>/<family>/campaign/{substitute.iqds, surrogate.ntar, ..., transfer.csv, summary.json}
//! <out>/report/<family>_curves.csv
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rfadv::attacks::BoxBounds;
use rfadv::blackbox::{run_campaign, ModelOracle, Oracle};
use rfadv::models::{evaluate, train, EpochStats, Family, TrainedModel};
use rfadv::sigkit::{generate_dataset, load_dataset, save_dataset};
use rfadv::Dataset;

use crate::config::ExperimentConfig;
use crate::error::{require, CliError};

pub const DATASET_FILE: &str = "dataset.iqds";
pub const CHECKPOINT_FILE: &str = "victim.ntar";
pub const EVAL_CSV: &str = "victim_eval.csv";
pub const EVAL_JSON: &str = "victim_eval.json";
pub const HISTORY_CSV: &str = "victim_history.csv";
pub const CAMPAIGN_DIR: &str = "campaign";
pub const TRANSFER_CSV: &str = "transfer.csv";
pub const REPORT_DIR: &str = "report";
pub const CURVES_HEADER: &str =
    "snr,victim_test_acc,clean_acc,adv_acc,drop,transfer_rate,surrogate_clean_acc,surrogate_adv_acc,frames";

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::runtime("write")(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::runtime("write")(format!("{}: {e}", path.display())))
}

fn load_run_dataset(out: &Path) -> Result<Dataset, CliError> {
    let path = out.join(DATASET_FILE);
    require(&path)?;
    load_dataset(&path).map_err(|e| CliError::runtime("load dataset")(format!("{}: {e}", path.display())))
}

pub fn gen_data(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let generator = config.generator()?;
    let dataset = generate_dataset(&generator).map_err(|e| CliError::runtime("generate")(e.to_string()))?;
    create_dir(out)?;
    let path = out.join(DATASET_FILE);
    save_dataset(&dataset, &path).map_err(|e| CliError::runtime("write")(e.to_string()))?;
    println!(
        "wrote {} frames ({} classes x {} SNRs x {} per cell) to {}",
        dataset.len(),
        rfadv::NUM_CLASSES,
        generator.snr_list.len(),
        generator.frames_per_class_per_snr,
        path.display()
    );
    Ok(())
}

pub fn train_victim(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let family = config.family()?;
    let spec = config.victim_spec()?;
    let train_config = config.victim_train()?;
    let dataset = load_run_dataset(out)?;
    let (train_set, test_set) = dataset
        .split(config.split.test_fraction, config.split_seed())
        .map_err(|e| CliError::Config(format!("split: {e}")))?;
    let model = TrainedModel::build(spec, config.victim_init_seed()).map_err(|e| CliError::Config(e.to_string()))?;
    log::info!("training {family} victim on {} frames", train_set.len());
    let model = train(model, &train_set, &train_config).map_err(|e| CliError::runtime("train")(e.to_string()))?;
    let report = evaluate(&model, &test_set).map_err(|e| CliError::runtime("evaluate")(e.to_string()))?;

    let dir = out.join(family.name());
    create_dir(&dir)?;
    model
        .save_checkpoint(dir.join(CHECKPOINT_FILE))
        .map_err(|e| CliError::runtime("write")(e.to_string()))?;
    write(&dir.join(EVAL_CSV), &report.to_csv())?;
    write(&dir.join(EVAL_JSON), &report.to_json())?;
    write(&dir.join(HISTORY_CSV), &EpochStats::history_csv(&model.history))?;
    println!(
        "{family} victim: test accuracy {:.4} on {} frames; checkpoint {}",
        report.accuracy(),
        report.total(),
        dir.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

pub fn campaign(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let family = config.family()?;
    let spec = config.victim_spec()?;
    let dataset = load_run_dataset(out)?;
    let dir = out.join(family.name());
    let checkpoint = dir.join(CHECKPOINT_FILE);
    require(&checkpoint)?;
    let victim = TrainedModel::load_checkpoint(&checkpoint, Some(&spec)).map_err(|e| match e {
        rfadv::models::ModelError::SpecMismatch { .. } => {
            CliError::Config(format!("{}: {e}", checkpoint.display()))
        }
        other => CliError::runtime("load checkpoint")(format!("{}: {other}", checkpoint.display())),
    })?;
    let bounds = BoxBounds::from_dataset(&dataset).map_err(|e| CliError::runtime("bounds")(e.to_string()))?;
    let campaign_config = config.campaign(bounds)?;
    let oracle = ModelOracle::new(victim);
    let campaign_dir = dir.join(CAMPAIGN_DIR);
    let outcome = run_campaign(&oracle, &dataset, &campaign_config, Some(&campaign_dir))
        .map_err(|e| CliError::runtime("campaign")(e.to_string()))?;
    let high = outcome.report.high_snr();
    println!(
        "{family} campaign: {} oracle queries; SNR >= {} dB accuracy {:.4} -> {:.4} (drop {:.2} points, relative {:.2}%); mean L2 {:.4}; results in {}",
        oracle.query_count(),
        campaign_config.high_snr_threshold,
        high.victim_clean_accuracy(),
        high.victim_adv_accuracy(),
        high.drop() * 100.0,
        high.relative_drop() * 100.0,
        outcome.report.mean_l2,
        campaign_dir.display()
    );
    Ok(())
}

/// Rows of a CSV file keyed by the first column, header dropped.
fn rows_by_snr(path: &Path) -> Result<BTreeMap<i32, Vec<String>>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::runtime("read")(format!("{}: {e}", path.display())))?;
    let mut rows = BTreeMap::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        let snr = fields[0]
            .parse()
            .map_err(|_| CliError::runtime("read")(format!("{}:{}: bad snr {:?}", path.display(), n + 1, fields[0])))?;
        rows.insert(snr, fields[1..].to_vec());
    }
    Ok(rows)
}

/// Families with any artifacts under `out`, with the files each one lacks.
fn family_runs(out: &Path) -> Vec<(Family, Vec<PathBuf>)> {
    [Family::Cnn, Family::Lstm, Family::Mlp]
        .into_iter()
        .filter(|f| out.join(f.name()).is_dir())
        .map(|f| {
            let dir = out.join(f.name());
            let missing = [dir.join(EVAL_CSV), dir.join(CAMPAIGN_DIR).join(TRANSFER_CSV)]
                .into_iter()
                .filter(|p| !p.exists())
                .collect();
            (f, missing)
        })
        .collect()
}

pub fn report(out: &Path) -> Result<(), CliError> {
    let runs = family_runs(out);
    if runs.is_empty() {
        return Err(CliError::Missing(vec![format!(
            "no victim runs (cnn/, lstm/ or mlp/) under {}",
            out.display()
        )]));
    }
    let missing: Vec<String> = runs
        .iter()
        .flat_map(|(_, m)| m.iter().map(|p| p.display().to_string()))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Missing(missing));
    }
    let report_dir = out.join(REPORT_DIR);
    create_dir(&report_dir)?;
    for (family, _) in runs {
        let dir = out.join(family.name());
        let eval = rows_by_snr(&dir.join(EVAL_CSV))?;
        let transfer = rows_by_snr(&dir.join(CAMPAIGN_DIR).join(TRANSFER_CSV))?;
        let mut table = format!("{CURVES_HEADER}\n");
        let snrs: std::collections::BTreeSet<i32> = eval.keys().chain(transfer.keys()).copied().collect();
        for snr in snrs {
            let victim = eval.get(&snr).and_then(|r| r.first().cloned()).unwrap_or_default();
            let attack = transfer.get(&snr).cloned().unwrap_or_else(|| vec![String::new(); 7]);
            table.push_str(&format!("{snr},{victim},{}\n", attack.join(",")));
        }
        let path = report_dir.join(format!("{}_curves.csv", family.name()));
        write(&path, &table)?;
        println!("{family}: wrote {}", path.display());
    }
    Ok(())
}
