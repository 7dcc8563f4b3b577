//! Experiment orchestration: seeded data/poison/train pipelines, per-epoch
//! CSV emission, and multi-seed summaries.
//!
//! Seeding uses one stream per concern. For repeat seed `s`:
//! data generation uses `data_seed + 4s`, poisoning `poison_seed + 4s + 1`,
//! the validation split `data_seed + 4s + 2`, and the clean test set
//! `data_seed + 4s + 3`. Training uses `s` directly. Changing the training
//! mode or seed therefore never changes the poisoned data, so mode sweeps
//! are controlled comparisons.

use std::fs;
use std::path::Path;

use crate::config::{DataSource, ExperimentConfig};
use crate::data::{generate_synthetic, load_idx, split, Dataset};
use crate::error::Result;
use crate::metrics::{accuracy, attack_success_rate, EpochReport, CSV_HEADER};
use crate::poison::poison_dataset;
use crate::trainer::{train_keep_trainer, EvalContext, Mode, Trainer};

/// One seed's training run with its evaluation results.
pub struct SeedRun {
    pub seed: u64,
    pub history: Vec<EpochReport>,
    /// Clean test accuracy of the best-validation checkpoint.
    pub acc: f64,
    /// Attack success rate of the best-validation checkpoint.
    pub asr: f64,
    /// Mean filtered-poison-fraction over the final 10 epochs.
    pub filtered_last10: f64,
    pub csv: String,
    pub lid_log: Vec<(usize, usize, bool, f64)>,
    pub coreset_log: Vec<(usize, usize, usize, bool, bool)>,
}

pub struct RunSummary {
    pub mode: Mode,
    pub runs: Vec<SeedRun>,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub asr_mean: f64,
    pub asr_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Poisoned training split, clean validation split, and clean test set for
/// one repeat seed.
pub fn build_data(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let base_seed = cfg.data.data_seed.wrapping_add(4 * seed);
    let (base, test) = match &cfg.data.source {
        DataSource::Synthetic {
            classes,
            per_class,
            image_side,
        } => {
            let base = generate_synthetic(*classes, *per_class, *image_side, base_seed)?;
            let test_per_class = (*per_class / 5).max(20);
            let test = generate_synthetic(
                *classes,
                test_per_class,
                *image_side,
                base_seed.wrapping_add(3),
            )?;
            (base, test)
        }
        DataSource::Idx { images, labels } => {
            let full = load_idx(images, labels)?;
            // carve out a clean stratified test portion before poisoning
            let (rest, test) = split(&full, 0.1, base_seed.wrapping_add(3))?;
            (rest, test)
        }
    };

    let poisoned = if cfg.poison.spec.injection_rate > 0.0 {
        poison_dataset(
            &base,
            &cfg.poison.spec,
            cfg.poison.poison_seed.wrapping_add(4 * seed).wrapping_add(1),
        )?
    } else {
        base
    };
    let (train_ds, val_ds) = split(&poisoned, cfg.data.val_fraction, base_seed.wrapping_add(2))?;
    Ok((train_ds, val_ds, test))
}

fn render_csv(history: &[EpochReport], timing: bool) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in history {
        let row = if timing {
            r.csv_row()
        } else {
            let mut masked = r.clone();
            masked.wall_time_ms = 0;
            masked.csv_row()
        };
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// Trains one seed in the given mode and evaluates the selected checkpoint.
pub fn run_seed(cfg: &ExperimentConfig, mode: Mode, seed: u64, workers: usize) -> Result<SeedRun> {
    let (train_ds, val_ds, test_ds) = build_data(cfg, seed)?;
    let mut tcfg = cfg.train.clone();
    tcfg.mode = mode;
    tcfg.seed = seed;
    tcfg.workers = workers;
    tcfg.log_lid = cfg.output.log_lid;
    tcfg.log_coreset = cfg.output.log_coreset;

    let eval = EvalContext {
        test: test_ds.clone(),
        poison_spec: cfg.poison.spec.clone(),
    };
    let trainer: Trainer = train_keep_trainer(train_ds, val_ds, tcfg, Some(eval))?;

    let history = trainer.history.clone();
    let lid_log = trainer.lid_log.clone();
    let coreset_log = trainer.coreset_log.clone();
    let last10 = history.iter().rev().take(10).collect::<Vec<_>>();
    let filtered_last10 = last10
        .iter()
        .map(|r| r.filtered_poison_fraction)
        .sum::<f64>()
        / last10.len().max(1) as f64;

    // Reported numbers come from the end-of-training model; the best
    // validation checkpoint remains available through the trainer API.
    let selected = trainer.model;
    let acc = accuracy(&selected, &test_ds)?;
    let asr = attack_success_rate(&selected, &test_ds, &cfg.poison.spec)?;

    Ok(SeedRun {
        seed,
        csv: render_csv(&history, cfg.output.timing),
        history,
        acc,
        asr,
        filtered_last10,
        lid_log,
        coreset_log,
    })
}

/// Runs every seed in the config, writes per-seed CSVs, optional LID and
/// coreset logs, and a summary file; returns the collected results.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<RunSummary> {
    let mode = cfg.train.mode;
    fs::create_dir_all(&cfg.output.dir)?;
    let mut runs = Vec::new();
    for &seed in &cfg.output.seeds {
        let run = run_seed(cfg, mode, seed, workers)?;
        let csv_path = cfg
            .output
            .dir
            .join(format!("{}_seed{}.csv", mode.as_str(), seed));
        fs::write(&csv_path, &run.csv)?;
        if cfg.output.log_lid {
            write_lid_log(&run, &cfg.output.dir, seed)?;
        }
        if cfg.output.log_coreset {
            write_coreset_log(&run, &cfg.output.dir, seed)?;
        }
        runs.push(run);
    }

    let accs: Vec<f64> = runs.iter().map(|r| r.acc).collect();
    let asrs: Vec<f64> = runs.iter().map(|r| r.asr).collect();
    let (acc_mean, acc_std) = mean_std(&accs);
    let (asr_mean, asr_std) = mean_std(&asrs);

    let mut summary = String::new();
    summary.push_str(&format!("mode={}\n", mode.as_str()));
    summary.push_str(&format!(
        "seeds={}\n",
        cfg.output
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",")
    ));
    for run in &runs {
        summary.push_str(&format!(
            "seed={} acc={:.6} asr={:.6} filtered_last10={:.6}\n",
            run.seed, run.acc, run.asr, run.filtered_last10
        ));
    }
    summary.push_str(&format!("acc_mean={acc_mean:.6} acc_std={acc_std:.6}\n"));
    summary.push_str(&format!("asr_mean={asr_mean:.6} asr_std={asr_std:.6}\n"));
    fs::write(
        cfg.output.dir.join(format!("{}_summary.txt", mode.as_str())),
        &summary,
    )?;

    Ok(RunSummary {
        mode,
        runs,
        acc_mean,
        acc_std,
        asr_mean,
        asr_std,
    })
}

fn write_lid_log(run: &SeedRun, dir: &Path, seed: u64) -> Result<()> {
    let mut out = String::from("epoch,sample_id,is_poisoned,smoothed_lid\n");
    for &(epoch, id, poisoned, lid) in &run.lid_log {
        out.push_str(&format!("{epoch},{id},{},{lid:.6}\n", poisoned as u8));
    }
    fs::write(dir.join(format!("lid_seed{seed}.csv")), out)?;
    Ok(())
}

fn write_coreset_log(run: &SeedRun, dir: &Path, seed: u64) -> Result<()> {
    let mut out = String::from("epoch,class,sample_id,selected,is_poisoned\n");
    for &(epoch, class, id, selected, poisoned) in &run.coreset_log {
        out.push_str(&format!(
            "{epoch},{class},{id},{},{}\n",
            selected as u8, poisoned as u8
        ));
    }
    fs::write(dir.join(format!("coreset_seed{seed}.csv")), out)?;
    Ok(())
}

/// Worker count from the environment; results never depend on it.
pub fn workers_from_env() -> usize {
    std::env::var("COLLIDER_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1)
}
