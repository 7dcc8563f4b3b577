//! Performance measures: clean accuracy, attack success rate, and the
//! fraction of poisoned data kept out of the coreset.

use std::collections::BTreeSet;

use crate::data::Dataset;
use crate::error::{ColliderError, Result};
use crate::model::{argmax, ModelState};
use crate::poison::{poison_all_nontarget, PoisonSpec};

/// One epoch's measurements, also the CSV row payload.
#[derive(Debug, Clone)]
pub struct EpochReport {
    pub epoch: usize,
    pub val_acc: f64,
    /// Clean test accuracy, filled for end-of-run evaluations.
    pub test_acc: Option<f64>,
    pub asr: f64,
    pub filtered_poison_fraction: f64,
    pub coreset_size: usize,
    pub eliminated_total: usize,
    pub wall_time_ms: u64,
}

/// Fixed CSV header for per-epoch reports.
pub const CSV_HEADER: &str =
    "epoch,val_acc,asr,filtered_poison_fraction,coreset_size,eliminated_total,wall_time_ms";

impl EpochReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{},{},{}",
            self.epoch,
            self.val_acc,
            self.asr,
            self.filtered_poison_fraction,
            self.coreset_size,
            self.eliminated_total,
            self.wall_time_ms
        )
    }
}

/// Fraction of samples whose argmax logit equals the label. Argmax ties break
/// toward the smaller class index.
pub fn accuracy(m: &ModelState, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(ColliderError::Parameter("empty dataset".into()));
    }
    let inputs: Vec<Vec<f64>> = ds.samples.iter().map(|s| s.pixels.clone()).collect();
    let out = m.forward(&inputs)?;
    let correct = out
        .logits
        .iter()
        .zip(&ds.samples)
        .filter(|(z, s)| argmax(z) == s.label)
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Attack success rate: trigger every originally-non-target test sample and
/// count predictions equal to the target class.
pub fn attack_success_rate(m: &ModelState, test: &Dataset, spec: &PoisonSpec) -> Result<f64> {
    let triggered = poison_all_nontarget(test, spec)?;
    if triggered.is_empty() {
        return Err(ColliderError::Parameter(
            "all test samples belong to the target class".into(),
        ));
    }
    let inputs: Vec<Vec<f64>> = triggered.samples.iter().map(|s| s.pixels.clone()).collect();
    let out = m.forward(&inputs)?;
    let hits = out
        .logits
        .iter()
        .filter(|z| argmax(z) == spec.target_class)
        .count();
    Ok(hits as f64 / triggered.len() as f64)
}

/// `1 - |coreset ∩ poisoned| / |poisoned|`, measured against the original
/// poisoned population so permanent elimination counts as filtering. Returns
/// 1.0 by convention when nothing was poisoned.
pub fn filtered_poison_fraction(coreset_ids: &BTreeSet<usize>, poisoned_ids: &BTreeSet<usize>) -> f64 {
    if poisoned_ids.is_empty() {
        return 1.0;
    }
    let kept = coreset_ids.intersection(poisoned_ids).count();
    1.0 - kept as f64 / poisoned_ids.len() as f64
}
