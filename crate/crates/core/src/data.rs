//! Dataset construction and file formats.
//!
//! Class labels are zero-based in memory and one-based in label files.
//!
//! Matrix files come in two formats, chosen by extension:
//!
//! * `.csv`: UTF-8, one matrix row per line, comma separated, `.` decimal.
//! * anything else: `SADL1` binary. The 5-byte magic `SADL1`, then `rows`
//!   and `cols` as little-endian `u32`, then `rows·cols` little-endian `f64`
//!   values in column-major order (one sample after another for data
//!   matrices).

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::QR;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SadlError};
use crate::model::{gaussian_matrix, seeded_rng, DataMatrix, LabelMatrix, Mat, StructureTarget};

pub const BINARY_MAGIC: &[u8; 5] = b"SADL1";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: DataMatrix,
    /// Zero-based class of every column of `x`.
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn new(x: DataMatrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if labels.len() != x.samples() {
            return Err(SadlError::DimensionMismatch(format!(
                "{} labels for {} samples",
                labels.len(),
                x.samples()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(SadlError::LabelOutOfRange {
                label: bad + 1,
                classes: class_count,
            });
        }
        let counts = class_counts(&labels, class_count);
        if let Some(k) = counts.iter().position(|&n| n == 0) {
            return Err(SadlError::InvalidData(format!("class {} has no samples", k + 1)));
        }
        Ok(LabeledDataset { x, labels, class_count })
    }

    pub fn samples(&self) -> usize {
        self.labels.len()
    }

    pub fn label_matrix(&self) -> Result<LabelMatrix> {
        one_hot_labels(&self.labels, self.class_count)
    }

    pub fn select(&self, cols: &[usize]) -> LabeledDataset {
        LabeledDataset {
            x: self.x.select_columns(cols),
            labels: cols.iter().map(|&j| self.labels[j]).collect(),
            class_count: self.class_count,
        }
    }
}

pub fn class_counts(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for &l in labels {
        if l < classes {
            counts[l] += 1;
        }
    }
    counts
}

/// Splits `total` rows among `parts` classes as evenly as possible; the
/// first `total % parts` classes get one extra row.
pub fn even_blocks(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(|k| base + usize::from(k < extra)).collect()
}

/// Builds `H`. Without `rows_per_class` or `s`, the target is `n × n` with
/// one block per class sized by its sample count.
pub fn build_structure_target(
    labels: &[usize],
    classes: usize,
    rows_per_class: Option<&[usize]>,
    s: Option<usize>,
) -> Result<StructureTarget> {
    if classes == 0 {
        return Err(SadlError::InvalidBlockSpec("need at least one class".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(SadlError::LabelOutOfRange { label: bad + 1, classes });
    }
    let blocks = match (rows_per_class, s) {
        (Some(rows), s) => {
            if rows.len() != classes {
                return Err(SadlError::InvalidBlockSpec(format!(
                    "{} row counts for {classes} classes",
                    rows.len()
                )));
            }
            let total: usize = rows.iter().sum();
            if let Some(s) = s {
                if s != total {
                    return Err(SadlError::InvalidBlockSpec(format!(
                        "row counts sum to {total}, expected s = {s}"
                    )));
                }
            }
            rows.to_vec()
        }
        (None, Some(s)) => {
            if s < classes {
                return Err(SadlError::InvalidBlockSpec(format!(
                    "s = {s} is smaller than the class count {classes}"
                )));
            }
            even_blocks(s, classes)
        }
        (None, None) => {
            let counts = class_counts(labels, classes);
            if let Some(k) = counts.iter().position(|&n| n == 0) {
                return Err(SadlError::InvalidBlockSpec(format!(
                    "class {} has no samples; pass explicit row counts",
                    k + 1
                )));
            }
            counts
        }
    };
    StructureTarget::from_blocks(labels, &blocks)
}

/// `Y[k, j] = 1` iff sample `j` is in class `k`.
pub fn one_hot_labels(labels: &[usize], classes: usize) -> Result<LabelMatrix> {
    let mut y = Mat::zeros(classes, labels.len());
    for (j, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(SadlError::LabelOutOfRange { label: l + 1, classes });
        }
        y[(l, j)] = 1.0;
    }
    LabelMatrix::new(y)
}

/// Gaussian projection matrix (`d × m`) with unit-norm rows.
pub fn projection_matrix(m: usize, d: usize, seed: u64) -> Mat {
    let mut rng = seeded_rng(seed);
    let mut p = gaussian_matrix(d, m, 1.0, &mut rng);
    for mut row in p.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    p
}

pub fn random_projection(x: &DataMatrix, d: usize, seed: u64) -> Result<DataMatrix> {
    if d == 0 {
        return Err(SadlError::InvalidDims("projection dimension must be >= 1".into()));
    }
    DataMatrix::new(projection_matrix(x.features(), d, seed) * x.as_matrix())
}

/// Rescales every column to unit l2 norm; zero columns stay zero.
pub fn normalize_columns(x: &DataMatrix) -> DataMatrix {
    let mut m = x.as_matrix().clone();
    for mut col in m.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    DataMatrix::new(m).expect("scaling keeps entries finite")
}

/// Distribution of the in-subspace coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientDist {
    /// Standard normal. Every class is symmetric about the origin, so no
    /// linear classifier can tell the classes apart.
    Normal,
    /// Absolute value of a standard normal: each class fills a cone of its
    /// subspace, like nonnegative image or CNN features.
    FoldedNormal,
}

/// Parameters of the union-of-subspaces benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub subspace_dim: usize,
    pub ambient_dim: usize,
    pub n_per_class: usize,
    pub noise_sigma: f64,
    pub coefficients: CoefficientDist,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 3,
            subspace_dim: 5,
            ambient_dim: 60,
            n_per_class: 100,
            noise_sigma: 0.05,
            coefficients: CoefficientDist::FoldedNormal,
            seed: 42,
        }
    }
}

/// Every class lives near its own random `subspace_dim`-dimensional
/// subspace: samples are `basis·coeffs + noise`, with the basis an
/// orthonormalized Gaussian matrix. Returns the full (class-sorted) dataset.
pub fn synth_full(cfg: &SynthConfig) -> Result<LabeledDataset> {
    if cfg.subspace_dim == 0 || cfg.subspace_dim >= cfg.ambient_dim {
        return Err(SadlError::InvalidDims(format!(
            "subspace_dim = {} must be in 1..{}",
            cfg.subspace_dim, cfg.ambient_dim
        )));
    }
    if cfg.classes < 2 || cfg.n_per_class < 2 {
        return Err(SadlError::InvalidDims(
            "need at least 2 classes and 2 samples per class".into(),
        ));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
        return Err(SadlError::InvalidDims(format!(
            "noise_sigma must be >= 0, got {}",
            cfg.noise_sigma
        )));
    }
    let mut rng = seeded_rng(cfg.seed);
    let n = cfg.classes * cfg.n_per_class;
    let mut x = Mat::zeros(cfg.ambient_dim, n);
    let mut labels = Vec::with_capacity(n);
    for k in 0..cfg.classes {
        let raw = gaussian_matrix(cfg.ambient_dim, cfg.subspace_dim, 1.0, &mut rng);
        let basis = QR::new(raw).q();
        let mut coeffs = gaussian_matrix(cfg.subspace_dim, cfg.n_per_class, 1.0, &mut rng);
        if cfg.coefficients == CoefficientDist::FoldedNormal {
            coeffs.apply(|v| *v = v.abs());
        }
        let mut block = basis * coeffs;
        if cfg.noise_sigma > 0.0 {
            for v in block.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v += cfg.noise_sigma * e;
            }
        }
        x.columns_mut(k * cfg.n_per_class, cfg.n_per_class).copy_from(&block);
        labels.extend(std::iter::repeat_n(k, cfg.n_per_class));
    }
    LabeledDataset::new(DataMatrix::new(x)?, labels, cfg.classes)
}

/// The benchmark split 50/50 per class into `(train, test)`.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let full = synth_full(cfg)?;
    split(&full, SplitSpec::Fraction(0.5), cfg.seed.wrapping_add(1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    /// Fraction of every class that goes to training (rounded).
    Fraction(f64),
    /// Fixed number of training samples per class.
    PerClass(usize),
}

/// Stratified, seeded split. Both sides keep at least one sample per class.
pub fn split(
    data: &LabeledDataset,
    spec: SplitSpec,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if let SplitSpec::Fraction(f) = spec {
        if !(f > 0.0 && f < 1.0) {
            return Err(SadlError::InvalidDims(format!(
                "train fraction must be in (0, 1), got {f}"
            )));
        }
    }
    let mut rng = seeded_rng(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for k in 0..data.class_count {
        let mut members: Vec<usize> = (0..data.samples()).filter(|&j| data.labels[j] == k).collect();
        let count = members.len();
        let take = match spec {
            SplitSpec::Fraction(f) => ((count as f64) * f).round() as usize,
            SplitSpec::PerClass(t) => t,
        };
        if count < 2 || take == 0 || take >= count {
            return Err(SadlError::ClassTooSmall { class: k + 1, count });
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..take]);
        test.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.select(&train), data.select(&test)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Binary,
}

impl MatrixFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::Binary,
        }
    }
}

pub fn encode_binary(m: &Mat) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.nrows())
        .map_err(|_| SadlError::InvalidDims(format!("{} rows exceed u32", m.nrows())))?;
    let cols = u32::try_from(m.ncols())
        .map_err(|_| SadlError::InvalidDims(format!("{} columns exceed u32", m.ncols())))?;
    let mut out = Vec::with_capacity(13 + 8 * m.len());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    // nalgebra storage is column-major already
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_binary(bytes: &[u8], path: &str) -> Result<Mat> {
    if bytes.len() < 13 || &bytes[..5] != BINARY_MAGIC {
        return Err(SadlError::MagicMismatch { path: path.into() });
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let payload = &bytes[13..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| SadlError::MagicMismatch { path: path.into() })?;
    if payload.len() != expected {
        return Err(SadlError::Parse {
            path: path.into(),
            line: 0,
            column: 13 + payload.len().min(expected),
            message: format!(
                "header declares {rows}x{cols} ({expected} payload bytes) but found {}",
                payload.len()
            ),
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Mat::from_vec(rows, cols, values))
}

/// Each value uses the shortest representation that parses back to the
/// same `f64`.
pub fn encode_csv(m: &Mat) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn decode_csv(text: &str, path: &str) -> Result<Mat> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| SadlError::Parse {
                path: path.into(),
                line: i + 1,
                column: col + 1,
                message: format!("not a number: {:?}", field.trim()),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(SadlError::Parse {
                    path: path.into(),
                    line: i + 1,
                    column: row.len().min(first.len()) + 1,
                    message: format!("expected {} fields, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(SadlError::Parse {
            path: path.into(),
            line: 1,
            column: 1,
            message: "empty matrix file".into(),
        });
    }
    let cols = rows[0].len();
    Ok(Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn save_matrix(path: &Path, m: &Mat) -> Result<()> {
    let bytes = match MatrixFormat::from_path(path) {
        MatrixFormat::Csv => encode_csv(m).into_bytes(),
        MatrixFormat::Binary => encode_binary(m)?,
    };
    fs::write(path, bytes).map_err(|e| SadlError::io(path, e))
}

pub fn load_matrix(path: &Path) -> Result<Mat> {
    let name = path.display().to_string();
    match MatrixFormat::from_path(path) {
        MatrixFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| SadlError::io(path, e))?;
            decode_csv(&text, &name)
        }
        MatrixFormat::Binary => {
            let bytes = fs::read(path).map_err(|e| SadlError::io(path, e))?;
            decode_binary(&bytes, &name)
        }
    }
}

/// Loads a feature matrix and checks it is non-empty and finite.
pub fn load_data(path: &Path) -> Result<DataMatrix> {
    DataMatrix::new(load_matrix(path)?)
}

/// Writes one-based labels, one per line.
pub fn save_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| SadlError::io(path, e))?;
    let mut text = String::with_capacity(labels.len() * 3);
    for l in labels {
        text.push_str(&(l + 1).to_string());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| SadlError::io(path, e))
}

/// Reads one-based labels and returns them zero-based.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| SadlError::io(path, e))?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: usize = t.parse().map_err(|_| SadlError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            column: 1,
            message: format!("not a positive integer label: {t:?}"),
        })?;
        if v == 0 {
            return Err(SadlError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                column: 1,
                message: "labels are one-based".into(),
            });
        }
        labels.push(v - 1);
    }
    Ok(labels)
}
