//! Experiment configuration: a plain-text `key = value` format with
//! `[data]`, `[poison]`, `[train]`, and `[output]` sections. Unknown keys are
//! errors so typos never silently fall back to defaults.

use std::path::{Path, PathBuf};

use crate::error::{ColliderError, Result};
use crate::poison::{LabelMode, PoisonSpec, TriggerKind};
use crate::trainer::{Mode, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        classes: usize,
        per_class: usize,
        image_side: usize,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub val_fraction: f64,
    pub data_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic {
                classes: 10,
                per_class: 500,
                image_side: 16,
            },
            val_fraction: 0.04,
            data_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoisonConfig {
    pub spec: PoisonSpec,
    pub poison_seed: u64,
}

impl Default for PoisonConfig {
    fn default() -> Self {
        PoisonConfig {
            spec: PoisonSpec::new(TriggerKind::PatchChecker, 0, 0.10),
            poison_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub seeds: Vec<u64>,
    /// When false (the default), the CSV wall-time column is written as 0 so
    /// reruns are byte-identical.
    pub timing: bool,
    pub log_lid: bool,
    pub log_coreset: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            seeds: vec![0, 1, 2, 3, 4],
            timing: false,
            log_lid: false,
            log_coreset: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub poison: PoisonConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        ColliderError::Config(format!(
            "type mismatch for key '{key}' in [{section}]: cannot parse '{value}'"
        ))
    })
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ColliderError::Config(format!(
            "type mismatch for key '{key}' in [{section}]: expected true|false, got '{value}'"
        ))),
    }
}

fn parse_list<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|t| parse_num(section, key, t.trim()))
        .collect()
}

/// Parses the config text. Every key has a documented default; unknown keys
/// and type mismatches are errors.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut synthetic = (10usize, 500usize, 16usize);
    let mut idx_paths: (Option<PathBuf>, Option<PathBuf>) = (None, None);
    let mut section = String::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = line[1..line.len() - 1].to_string();
            if !matches!(section.as_str(), "data" | "poison" | "train" | "output") {
                return Err(ColliderError::Config(format!(
                    "unknown section [{section}] at line {}",
                    lineno + 1
                )));
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ColliderError::Config(format!("expected 'key = value' at line {}", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        let s = section.as_str();
        match (s, key) {
            ("data", "source") => match value {
                "synthetic" => {
                    cfg.data.source = DataSource::Synthetic {
                        classes: synthetic.0,
                        per_class: synthetic.1,
                        image_side: synthetic.2,
                    }
                }
                "idx" => {
                    cfg.data.source = DataSource::Idx {
                        images: PathBuf::new(),
                        labels: PathBuf::new(),
                    }
                }
                _ => {
                    return Err(ColliderError::Config(format!(
                        "type mismatch for key 'source' in [data]: expected synthetic|idx, got '{value}'"
                    )))
                }
            },
            ("data", "classes") => synthetic.0 = parse_num(s, key, value)?,
            ("data", "per_class") => synthetic.1 = parse_num(s, key, value)?,
            ("data", "image_side") => synthetic.2 = parse_num(s, key, value)?,
            ("data", "idx_images") => idx_paths.0 = Some(PathBuf::from(value)),
            ("data", "idx_labels") => idx_paths.1 = Some(PathBuf::from(value)),
            ("data", "val_fraction") => cfg.data.val_fraction = parse_num(s, key, value)?,
            ("data", "data_seed") => cfg.data.data_seed = parse_num(s, key, value)?,

            ("poison", "trigger") => {
                cfg.poison.spec.trigger = match value {
                    "patch" => TriggerKind::PatchChecker,
                    "sinusoid" => TriggerKind::SinusoidalStrips,
                    _ => {
                        return Err(ColliderError::Config(format!(
                            "type mismatch for key 'trigger' in [poison]: expected patch|sinusoid, got '{value}'"
                        )))
                    }
                }
            }
            ("poison", "target_class") => cfg.poison.spec.target_class = parse_num(s, key, value)?,
            ("poison", "injection_rate") => {
                cfg.poison.spec.injection_rate = parse_num(s, key, value)?
            }
            ("poison", "label_mode") => {
                cfg.poison.spec.label_mode = match value {
                    "dirty" => LabelMode::DirtyLabel,
                    "clean" => LabelMode::CleanLabel,
                    _ => {
                        return Err(ColliderError::Config(format!(
                            "type mismatch for key 'label_mode' in [poison]: expected dirty|clean, got '{value}'"
                        )))
                    }
                }
            }
            ("poison", "patch_size") => cfg.poison.spec.patch_size = parse_num(s, key, value)?,
            ("poison", "patch_intensity") => {
                cfg.poison.spec.patch_intensity = parse_num(s, key, value)?
            }
            ("poison", "sin_amplitude") => {
                cfg.poison.spec.sin_amplitude = parse_num(s, key, value)?
            }
            ("poison", "sin_frequency") => {
                cfg.poison.spec.sin_frequency = parse_num(s, key, value)?
            }
            ("poison", "poison_seed") => cfg.poison.poison_seed = parse_num(s, key, value)?,

            ("train", "mode") => cfg.train.mode = Mode::parse(value)?,
            ("train", "epochs") => cfg.train.total_epochs = parse_num(s, key, value)?,
            ("train", "coreset_ratio") => cfg.train.coreset_ratio = parse_num(s, key, value)?,
            ("train", "lid_start_epoch") => cfg.train.lid_start_epoch = parse_num(s, key, value)?,
            ("train", "lid_neighbors") => cfg.train.lid_neighbors = parse_num(s, key, value)?,
            ("train", "lid_window") => cfg.train.lid_window = parse_num(s, key, value)?,
            ("train", "lid_batch") => cfg.train.lid_batch = parse_num(s, key, value)?,
            ("train", "lambda") => cfg.train.lambda = parse_num(s, key, value)?,
            ("train", "batch_size") => cfg.train.batch_size = parse_num(s, key, value)?,
            ("train", "lr") => cfg.train.lr = parse_num(s, key, value)?,
            ("train", "momentum") => cfg.train.momentum = parse_num(s, key, value)?,
            ("train", "weight_decay") => cfg.train.weight_decay = parse_num(s, key, value)?,
            ("train", "mixup_alpha") => cfg.train.mixup_alpha = parse_num(s, key, value)?,
            ("train", "hidden") => cfg.train.hidden = parse_list(s, key, value)?,

            ("output", "dir") => cfg.output.dir = PathBuf::from(value),
            ("output", "seeds") => cfg.output.seeds = parse_list(s, key, value)?,
            ("output", "timing") => cfg.output.timing = parse_bool(s, key, value)?,
            ("output", "log_lid") => cfg.output.log_lid = parse_bool(s, key, value)?,
            ("output", "log_coreset") => cfg.output.log_coreset = parse_bool(s, key, value)?,

            _ => {
                return Err(ColliderError::Config(format!(
                    "unknown key '{key}' in [{section}] at line {}",
                    lineno + 1
                )))
            }
        }
        // keep synthetic params in sync if source already set to synthetic
        if let DataSource::Synthetic {
            classes,
            per_class,
            image_side,
        } = &mut cfg.data.source
        {
            *classes = synthetic.0;
            *per_class = synthetic.1;
            *image_side = synthetic.2;
        }
        if let DataSource::Idx { images, labels } = &mut cfg.data.source {
            if let Some(p) = &idx_paths.0 {
                *images = p.clone();
            }
            if let Some(p) = &idx_paths.1 {
                *labels = p.clone();
            }
        }
    }

    if cfg.output.seeds.is_empty() {
        return Err(ColliderError::Config("seeds list must be non-empty".into()));
    }
    if let DataSource::Idx { images, labels } = &cfg.data.source {
        if images.as_os_str().is_empty() || labels.as_os_str().is_empty() {
            return Err(ColliderError::Config(
                "idx source requires idx_images and idx_labels".into(),
            ));
        }
    }
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

/// Writes the config back out with every key explicit; `parse(serialize(c))`
/// reproduces `c`.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    out.push_str("[data]\n");
    match &cfg.data.source {
        DataSource::Synthetic {
            classes,
            per_class,
            image_side,
        } => {
            out.push_str("source = synthetic\n");
            out.push_str(&format!("classes = {classes}\n"));
            out.push_str(&format!("per_class = {per_class}\n"));
            out.push_str(&format!("image_side = {image_side}\n"));
        }
        DataSource::Idx { images, labels } => {
            out.push_str("source = idx\n");
            out.push_str(&format!("idx_images = {}\n", images.display()));
            out.push_str(&format!("idx_labels = {}\n", labels.display()));
        }
    }
    out.push_str(&format!("val_fraction = {}\n", cfg.data.val_fraction));
    out.push_str(&format!("data_seed = {}\n", cfg.data.data_seed));

    out.push_str("\n[poison]\n");
    let spec = &cfg.poison.spec;
    out.push_str(&format!(
        "trigger = {}\n",
        match spec.trigger {
            TriggerKind::PatchChecker => "patch",
            TriggerKind::SinusoidalStrips => "sinusoid",
        }
    ));
    out.push_str(&format!("target_class = {}\n", spec.target_class));
    out.push_str(&format!("injection_rate = {}\n", spec.injection_rate));
    out.push_str(&format!(
        "label_mode = {}\n",
        match spec.label_mode {
            LabelMode::DirtyLabel => "dirty",
            LabelMode::CleanLabel => "clean",
        }
    ));
    out.push_str(&format!("patch_size = {}\n", spec.patch_size));
    out.push_str(&format!("patch_intensity = {}\n", spec.patch_intensity));
    out.push_str(&format!("sin_amplitude = {}\n", spec.sin_amplitude));
    out.push_str(&format!("sin_frequency = {}\n", spec.sin_frequency));
    out.push_str(&format!("poison_seed = {}\n", cfg.poison.poison_seed));

    out.push_str("\n[train]\n");
    let t = &cfg.train;
    out.push_str(&format!("mode = {}\n", t.mode.as_str()));
    out.push_str(&format!("epochs = {}\n", t.total_epochs));
    out.push_str(&format!("coreset_ratio = {}\n", t.coreset_ratio));
    out.push_str(&format!("lid_start_epoch = {}\n", t.lid_start_epoch));
    out.push_str(&format!("lid_neighbors = {}\n", t.lid_neighbors));
    out.push_str(&format!("lid_window = {}\n", t.lid_window));
    out.push_str(&format!("lid_batch = {}\n", t.lid_batch));
    out.push_str(&format!("lambda = {}\n", t.lambda));
    out.push_str(&format!("batch_size = {}\n", t.batch_size));
    out.push_str(&format!("lr = {}\n", t.lr));
    out.push_str(&format!("momentum = {}\n", t.momentum));
    out.push_str(&format!("weight_decay = {}\n", t.weight_decay));
    out.push_str(&format!("mixup_alpha = {}\n", t.mixup_alpha));
    out.push_str(&format!(
        "hidden = {}\n",
        t.hidden
            .iter()
            .map(|h| h.to_string())
            .collect::<Vec<_>>()
            .join(",")
    ));

    out.push_str("\n[output]\n");
    out.push_str(&format!("dir = {}\n", cfg.output.dir.display()));
    out.push_str(&format!(
        "seeds = {}\n",
        cfg.output
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",")
    ));
    out.push_str(&format!("timing = {}\n", cfg.output.timing));
    out.push_str(&format!("log_lid = {}\n", cfg.output.log_lid));
    out.push_str(&format!("log_coreset = {}\n", cfg.output.log_coreset));
    out
}
