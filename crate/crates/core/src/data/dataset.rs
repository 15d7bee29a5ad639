use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    GaussianBlobs,
    ConcentricRings,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub num_classes: usize,
    pub features: usize,
    pub train_size: usize,
    pub val_size: usize,
    #[serde(default = "default_separation")]
    pub class_separation: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

fn default_separation() -> f64 {
    3.0
}

impl DatasetSpec {
    pub fn blobs(num_classes: usize, features: usize, train_size: usize, val_size: usize, class_separation: f64, seed: u64) -> Self {
        Self {
            kind: DatasetKind::GaussianBlobs,
            num_classes,
            features,
            train_size,
            val_size,
            class_separation,
            seed,
            path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::TooFewClasses(self.num_classes));
        }
        if self.features == 0 {
            return Err(Error::InvalidConfig("features must be at least 1".into()));
        }
        if self.kind == DatasetKind::Csv {
            if self.path.is_none() {
                return Err(Error::InvalidConfig("csv dataset needs a path".into()));
            }
            return Ok(());
        }
        if self.train_size < self.num_classes || self.val_size < self.num_classes {
            return Err(Error::InvalidConfig(format!(
                "train_size and val_size must be >= num_classes ({})",
                self.num_classes
            )));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "class_separation must be > 0, got {}",
                self.class_separation
            )));
        }
        Ok(())
    }
}

/// Feature rows and labels; rows `0..train_len` form the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub train_len: usize,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn train(&self) -> (&[Vec<f64>], &[usize]) {
        (&self.features[..self.train_len], &self.labels[..self.train_len])
    }

    pub fn validation(&self) -> (&[Vec<f64>], &[usize]) {
        (&self.features[self.train_len..], &self.labels[self.train_len..])
    }

    pub fn class_counts(labels: &[usize], num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for &l in labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Builds the dataset described by `spec`; `csv` specs are read from disk.
pub fn generate(spec: &DatasetSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    if spec.kind == DatasetKind::Csv {
        let path = spec.path.as_deref().unwrap_or(Path::new(""));
        return load_csv(path, spec.num_classes, spec.features, spec.train_size);
    }
    let centers = match spec.kind {
        DatasetKind::GaussianBlobs => blob_centers(spec),
        _ => Vec::new(),
    };
    let mut rng = seed::rng(spec.seed, &[seed::tag::DATASET]);
    let split = |size: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut labels: Vec<usize> = (0..size).map(|i| i % spec.num_classes).collect();
        labels.shuffle(rng);
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .map(|&c| match spec.kind {
                DatasetKind::GaussianBlobs => centers[c]
                    .iter()
                    .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                    .collect(),
                _ => ring_point(spec, c, rng),
            })
            .collect();
        (rows, labels)
    };
    let (mut features, mut labels) = split(spec.train_size, &mut rng);
    let (val_x, val_y) = split(spec.val_size, &mut rng);
    features.extend(val_x);
    labels.extend(val_y);
    Ok(LabeledDataset {
        features,
        labels,
        train_len: spec.train_size,
        num_classes: spec.num_classes,
    })
}

/// Unit directions scaled by the separation: ±e_i while the axes last, then
/// seeded random unit vectors.
fn blob_centers(spec: &DatasetSpec) -> Vec<Vec<f64>> {
    let d = spec.features;
    let mut rng = seed::rng(spec.seed, &[seed::tag::DATASET, u64::MAX]);
    (0..spec.num_classes)
        .map(|c| {
            let mut v = vec![0.0; d];
            if c < d {
                v[c] = 1.0;
            } else if c < 2 * d {
                v[c - d] = -1.0;
            } else {
                v = random_unit(d, &mut rng);
            }
            v.iter().map(|x| x * spec.class_separation).collect()
        })
        .collect()
}

fn random_unit<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn ring_point<R: Rng>(spec: &DatasetSpec, class: usize, rng: &mut R) -> Vec<f64> {
    let s = spec.class_separation;
    let radius = (class + 1) as f64 * s + 0.1 * s * rng.sample::<f64, _>(StandardNormal);
    random_unit(spec.features, rng)
        .into_iter()
        .map(|x| x * radius)
        .collect()
}

/// Per-column affine map fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Columns with zero variance keep unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..d)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
            *x = (*x - m) / s;
        }
    }
}

/// Reads `feature_1,…,feature_F,label` rows. A first row that does not parse
/// as numbers is treated as a header. The first `train_size` rows form the
/// training split, and standardization is fitted on those rows alone.
pub fn load_csv(path: &Path, num_classes: usize, features: usize, train_size: usize) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let malformed = |line: usize, message: String| Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(i + 1, |p| p.line() as usize);
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(malformed(line, format!("non-numeric field: {e}"))),
        };
        if values.len() != features + 1 {
            return Err(malformed(
                line,
                format!("expected {} fields, found {}", features + 1, values.len()),
            ));
        }
        let raw_label = values[features];
        if raw_label.fract() != 0.0 || raw_label < 0.0 {
            return Err(malformed(line, format!("label {raw_label} is not a class index")));
        }
        if raw_label >= num_classes as f64 {
            return Err(malformed(
                line,
                format!("label {raw_label} out of range for {num_classes} classes"),
            ));
        }
        if let Some(bad) = values[..features].iter().find(|v| !v.is_finite()) {
            return Err(malformed(line, format!("non-finite feature {bad}")));
        }
        labels.push(raw_label as usize);
        rows.push(values[..features].to_vec());
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let train_len = train_size.min(rows.len());
    let standardizer = Standardizer::fit(&rows[..train_len]);
    rows.iter_mut().for_each(|r| standardizer.apply(r));
    Ok(LabeledDataset {
        features: rows,
        labels,
        train_len,
        num_classes,
    })
}
