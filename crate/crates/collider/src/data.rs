//! Dataset construction, IDX ingestion, and stratified splitting.
//!
//! Images are stored as flat `f64` vectors in `[0, 1]`, channel-last,
//! row-major. Every sample carries a ground-truth `is_poisoned` provenance
//! flag that is only ever read by the metrics layer, never by training.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ColliderError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Image geometry: height, width, channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub ch: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.h * self.w * self.ch
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One labeled image with provenance.
#[derive(Debug, Clone)]
pub struct Sample {
    pub pixels: Vec<f64>,
    pub label: usize,
    pub id: usize,
    /// Ground truth, visible to metrics only.
    pub is_poisoned: bool,
}

/// Ordered collection of samples with common geometry.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub shape: Shape,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Ids of all samples flagged as poisoned.
    pub fn poisoned_ids(&self) -> Vec<usize> {
        self.samples
            .iter()
            .filter(|s| s.is_poisoned)
            .map(|s| s.id)
            .collect()
    }

    /// Checks the structural invariants: pixel lengths, label range,
    /// pixel range, and id uniqueness.
    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<usize> = self.samples.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.samples.len() {
            return Err(ColliderError::Consistency("duplicate sample ids".into()));
        }
        for s in &self.samples {
            if s.pixels.len() != self.shape.len() {
                return Err(ColliderError::Consistency(format!(
                    "sample {} has {} pixels, expected {}",
                    s.id,
                    s.pixels.len(),
                    self.shape.len()
                )));
            }
            if s.label >= self.num_classes {
                return Err(ColliderError::Consistency(format!(
                    "sample {} label {} out of range (C={})",
                    s.id, s.label, self.num_classes
                )));
            }
            if s.pixels.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(ColliderError::Consistency(format!(
                    "sample {} has pixels outside [0,1]",
                    s.id
                )));
            }
        }
        Ok(())
    }
}

/// Builds a deterministic synthetic classification task: one Gaussian blob
/// per class at a class-specific position and scale, plus pixel noise. A
/// linear probe separates the classes comfortably, which keeps end-to-end
/// runs in the minutes range.
pub fn generate_synthetic(
    classes: usize,
    per_class: usize,
    image_side: usize,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(ColliderError::Parameter(format!(
            "classes must be >= 2, got {classes}"
        )));
    }
    if per_class < 1 {
        return Err(ColliderError::Parameter("per_class must be >= 1".into()));
    }
    if image_side < 8 {
        return Err(ColliderError::Parameter(format!(
            "image_side must be >= 8, got {image_side}"
        )));
    }

    let shape = Shape {
        h: image_side,
        w: image_side,
        ch: 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = image_side as f64;
    let jitter = Normal::new(0.0, 0.04 * side).unwrap();
    let noise = Normal::new(0.0, 0.05).unwrap();

    let mut samples = Vec::with_capacity(classes * per_class);
    let mut id = 0usize;
    for c in 0..classes {
        // Blob centers sit on a ring around the image center so corners stay
        // near background level (triggers live in corners).
        let angle = 2.0 * PI * c as f64 / classes as f64 + 0.4;
        let cx = 0.5 * side + 0.26 * side * angle.cos();
        let cy = 0.5 * side + 0.26 * side * angle.sin();
        let sigma = (0.09 + 0.015 * (c % 3) as f64) * side;
        let amplitude = 0.75 + 0.05 * (c % 4) as f64;

        for _ in 0..per_class {
            let dx = jitter.sample(&mut rng);
            let dy = jitter.sample(&mut rng);
            let mut pixels = Vec::with_capacity(shape.len());
            for i in 0..image_side {
                for j in 0..image_side {
                    let dist2 = ((i as f64) - (cy + dy)).powi(2)
                        + ((j as f64) - (cx + dx)).powi(2);
                    let v = amplitude * (-dist2 / (2.0 * sigma * sigma)).exp()
                        + noise.sample(&mut rng);
                    pixels.push(v.clamp(0.0, 1.0));
                }
            }
            samples.push(Sample {
                pixels,
                label: c,
                id,
                is_poisoned: false,
            });
            id += 1;
        }
    }

    Ok(Dataset {
        samples,
        shape,
        num_classes: classes,
    })
}

fn read_u32_be(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ColliderError::Format {
                path: path.to_path_buf(),
                reason: "truncated file".into(),
            }
        } else {
            ColliderError::Io(e)
        }
    })?;
    Ok(u32::from_be_bytes(buf))
}

/// Loads an IDX image/label file pair (big-endian magics `0x00000803` /
/// `0x00000801`). Pixel bytes are scaled from `[0, 255]` to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut img = BufReader::new(File::open(images_path)?);
    let magic = read_u32_be(&mut img, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(ColliderError::Format {
            path: images_path.to_path_buf(),
            reason: format!("bad image magic 0x{magic:08x}"),
        });
    }
    let n = read_u32_be(&mut img, images_path)? as usize;
    let h = read_u32_be(&mut img, images_path)? as usize;
    let w = read_u32_be(&mut img, images_path)? as usize;

    let mut lbl = BufReader::new(File::open(labels_path)?);
    let magic = read_u32_be(&mut lbl, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(ColliderError::Format {
            path: labels_path.to_path_buf(),
            reason: format!("bad label magic 0x{magic:08x}"),
        });
    }
    let n_labels = read_u32_be(&mut lbl, labels_path)? as usize;
    if n != n_labels {
        return Err(ColliderError::Consistency(format!(
            "{n} images but {n_labels} labels"
        )));
    }

    let mut pixel_bytes = vec![0u8; n * h * w];
    img.read_exact(&mut pixel_bytes).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ColliderError::Format {
                path: images_path.to_path_buf(),
                reason: "truncated pixel payload".into(),
            }
        } else {
            ColliderError::Io(e)
        }
    })?;
    let mut label_bytes = vec![0u8; n];
    lbl.read_exact(&mut label_bytes).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ColliderError::Format {
                path: labels_path.to_path_buf(),
                reason: "truncated label payload".into(),
            }
        } else {
            ColliderError::Io(e)
        }
    })?;

    let num_classes = label_bytes.iter().copied().max().unwrap_or(0) as usize + 1;
    let samples = (0..n)
        .map(|i| Sample {
            pixels: pixel_bytes[i * h * w..(i + 1) * h * w]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect(),
            label: label_bytes[i] as usize,
            id: i,
            is_poisoned: false,
        })
        .collect();

    Ok(Dataset {
        samples,
        shape: Shape { h, w, ch: 1 },
        num_classes,
    })
}

/// Writes a single-channel dataset as an IDX image/label pair. Pixels are
/// quantized to bytes with rounding, so a round trip is exact to 1/255.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    if ds.shape.ch != 1 {
        return Err(ColliderError::Parameter(
            "IDX export supports single-channel images only".into(),
        ));
    }
    if ds.num_classes > 256 {
        return Err(ColliderError::Parameter(
            "IDX labels are single bytes; at most 256 classes".into(),
        ));
    }

    let mut img = BufWriter::new(File::create(images_path)?);
    img.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    img.write_all(&(ds.len() as u32).to_be_bytes())?;
    img.write_all(&(ds.shape.h as u32).to_be_bytes())?;
    img.write_all(&(ds.shape.w as u32).to_be_bytes())?;
    for s in &ds.samples {
        for &p in &s.pixels {
            img.write_all(&[(p * 255.0).round().clamp(0.0, 255.0) as u8])?;
        }
    }
    img.flush()?;

    let mut lbl = BufWriter::new(File::create(labels_path)?);
    lbl.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    lbl.write_all(&(ds.len() as u32).to_be_bytes())?;
    for s in &ds.samples {
        lbl.write_all(&[s.label as u8])?;
    }
    lbl.flush()?;
    Ok(())
}

/// Stratified train/validation split. Per class, `round(val_fraction * n_c)`
/// samples go to validation, drawn only from non-poisoned members so the
/// held-out set stays clean. Deterministic given the seed.
pub fn split(ds: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(ColliderError::Parameter(format!(
            "val_fraction must be in [0, 1), got {val_fraction}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val_ids: Vec<usize> = Vec::new();
    for c in 0..ds.num_classes {
        let class_total = ds.samples.iter().filter(|s| s.label == c).count();
        let mut clean: Vec<usize> = ds
            .samples
            .iter()
            .filter(|s| s.label == c && !s.is_poisoned)
            .map(|s| s.id)
            .collect();
        let want = (val_fraction * class_total as f64).round() as usize;
        clean.shuffle(&mut rng);
        val_ids.extend(clean.into_iter().take(want));
    }
    val_ids.sort_unstable();

    let in_val = |id: usize| val_ids.binary_search(&id).is_ok();
    let train = Dataset {
        samples: ds
            .samples
            .iter()
            .filter(|s| !in_val(s.id))
            .cloned()
            .collect(),
        shape: ds.shape,
        num_classes: ds.num_classes,
    };
    let val = Dataset {
        samples: ds
            .samples
            .iter()
            .filter(|s| in_val(s.id))
            .cloned()
            .collect(),
        shape: ds.shape,
        num_classes: ds.num_classes,
    };
    Ok((train, val))
}
