//! Backdoor injection: trigger patterns and poisoning policies.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Shape};
use crate::error::{ColliderError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerKind {
    /// Alternating checkerboard patch overwriting one image corner.
    PatchChecker,
    /// Additive vertical sinusoid over the whole image.
    SinusoidalStrips,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    /// Poison non-target samples and relabel them to the target class.
    DirtyLabel,
    /// Poison samples already in the target class, labels untouched.
    CleanLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

/// Full description of one poisoning campaign.
#[derive(Debug, Clone)]
pub struct PoisonSpec {
    pub trigger: TriggerKind,
    pub target_class: usize,
    pub injection_rate: f64,
    pub label_mode: LabelMode,
    pub patch_size: usize,
    pub patch_intensity: f64,
    pub patch_corner: Corner,
    pub sin_amplitude: f64,
    pub sin_frequency: f64,
}

impl PoisonSpec {
    /// Patch defaults follow the classic corner checkerboard; sinusoid
    /// defaults are SIG-style.
    pub fn new(trigger: TriggerKind, target_class: usize, injection_rate: f64) -> Self {
        PoisonSpec {
            trigger,
            target_class,
            injection_rate,
            label_mode: match trigger {
                TriggerKind::PatchChecker => LabelMode::DirtyLabel,
                TriggerKind::SinusoidalStrips => LabelMode::CleanLabel,
            },
            patch_size: 3,
            patch_intensity: 1.0,
            patch_corner: Corner::BottomRight,
            sin_amplitude: 0.08,
            sin_frequency: 6.0,
        }
    }

    pub fn validate(&self, shape: Shape, num_classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.injection_rate) {
            return Err(ColliderError::Parameter(format!(
                "injection_rate must be in [0,1], got {}",
                self.injection_rate
            )));
        }
        if self.target_class >= num_classes {
            return Err(ColliderError::Parameter(format!(
                "target_class {} out of range (C={num_classes})",
                self.target_class
            )));
        }
        if self.patch_size >= shape.h.min(shape.w) {
            return Err(ColliderError::Parameter(format!(
                "patch_size {} must be smaller than the image side",
                self.patch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.patch_intensity) {
            return Err(ColliderError::Parameter(
                "patch_intensity must be in [0,1]".into(),
            ));
        }
        if self.sin_amplitude < 0.0 || self.sin_amplitude > 1.0 {
            return Err(ColliderError::Parameter(
                "sin_amplitude must be in [0,1]".into(),
            ));
        }
        Ok(())
    }
}

/// Applies the trigger to one image, returning a new pixel vector.
///
/// `PatchChecker` overwrites an `s x s` corner region with an alternating
/// `intensity`/0 checkerboard (the local top-left cell gets `intensity`).
/// `SinusoidalStrips` adds `amplitude * sin(2*pi*j*f/W)` to column `j` on
/// every channel, then clips to `[0, 1]`.
pub fn apply_trigger(pixels: &[f64], shape: Shape, spec: &PoisonSpec) -> Result<Vec<f64>> {
    if pixels.len() != shape.len() {
        return Err(ColliderError::Parameter(format!(
            "pixel length {} does not match shape {}x{}x{}",
            pixels.len(),
            shape.h,
            shape.w,
            shape.ch
        )));
    }
    let mut out = pixels.to_vec();
    match spec.trigger {
        TriggerKind::PatchChecker => {
            let s = spec.patch_size;
            let (row0, col0) = match spec.patch_corner {
                Corner::TopLeft => (0, 0),
                Corner::TopRight => (0, shape.w - s),
                Corner::BottomLeft => (shape.h - s, 0),
                Corner::BottomRight => (shape.h - s, shape.w - s),
            };
            for a in 0..s {
                for b in 0..s {
                    let v = if (a + b) % 2 == 0 {
                        spec.patch_intensity
                    } else {
                        0.0
                    };
                    let base = ((row0 + a) * shape.w + (col0 + b)) * shape.ch;
                    for c in 0..shape.ch {
                        out[base + c] = v;
                    }
                }
            }
        }
        TriggerKind::SinusoidalStrips => {
            for i in 0..shape.h {
                for j in 0..shape.w {
                    let v = spec.sin_amplitude
                        * (2.0 * PI * j as f64 * spec.sin_frequency / shape.w as f64).sin();
                    let base = (i * shape.w + j) * shape.ch;
                    for c in 0..shape.ch {
                        out[base + c] = (out[base + c] + v).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Installs the backdoor into a training set.
///
/// The poisoned count is `round(injection_rate * |target class|)`. Dirty-label
/// mode draws that many samples uniformly from the non-target classes,
/// triggers them, and relabels them to the target class; clean-label mode
/// draws from within the target class and keeps labels. Either way the
/// selected samples get `is_poisoned = true`. Deterministic given the seed.
pub fn poison_dataset(ds: &Dataset, spec: &PoisonSpec, seed: u64) -> Result<Dataset> {
    spec.validate(ds.shape, ds.num_classes)?;
    let target_count = ds
        .samples
        .iter()
        .filter(|s| s.label == spec.target_class)
        .count();
    let want = (spec.injection_rate * target_count as f64).round() as usize;

    let mut pool: Vec<usize> = match spec.label_mode {
        LabelMode::DirtyLabel => ds
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label != spec.target_class)
            .map(|(i, _)| i)
            .collect(),
        LabelMode::CleanLabel => ds
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == spec.target_class)
            .map(|(i, _)| i)
            .collect(),
    };
    if want > pool.len() {
        return Err(ColliderError::Capacity(format!(
            "requested {want} poisoned samples but only {} candidates",
            pool.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let mut chosen = pool[..want].to_vec();
    chosen.sort_unstable();

    let mut out = ds.clone();
    for idx in chosen {
        let s = &mut out.samples[idx];
        s.pixels = apply_trigger(&s.pixels, ds.shape, spec)?;
        if spec.label_mode == LabelMode::DirtyLabel {
            s.label = spec.target_class;
        }
        s.is_poisoned = true;
    }
    Ok(out)
}

/// Builds the attack-success evaluation set: drops every sample originally
/// labeled with the target class, then triggers all remaining samples.
/// Labels are left untouched; the metric checks `prediction == target`.
pub fn poison_all_nontarget(ds: &Dataset, spec: &PoisonSpec) -> Result<Dataset> {
    spec.validate(ds.shape, ds.num_classes)?;
    let samples = ds
        .samples
        .iter()
        .filter(|s| s.label != spec.target_class)
        .map(|s| {
            Ok(crate::data::Sample {
                pixels: apply_trigger(&s.pixels, ds.shape, spec)?,
                label: s.label,
                id: s.id,
                is_poisoned: true,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        shape: ds.shape,
        num_classes: ds.num_classes,
    })
}
