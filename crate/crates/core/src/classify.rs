//! Inference: encode with Ω, map with Q, score with W, take the argmax.
//!
//! No iterative sparse coding happens here. A prediction costs three
//! matrix-vector products, or one against the fused `WQΩ` matrix, which is
//! an exact algebraic identity rather than an approximation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Result, SadlError};
use crate::model::{DataMatrix, Mat, ModelState, StructureTarget, Vector};

fn check_product(what: &str, a: &Mat, len: usize) -> Result<()> {
    if a.ncols() != len {
        return Err(SadlError::DimensionMismatch(format!(
            "{what} has {} columns but the input has length {len}",
            a.ncols()
        )));
    }
    Ok(())
}

/// Sparse code `Ωx`.
pub fn encode(omega: &Mat, x_col: &Vector) -> Result<Vector> {
    check_product("omega", omega, x_col.len())?;
    Ok(omega * x_col)
}

/// Structured representation `Qu`.
pub fn structured_rep(q: &Mat, u: &Vector) -> Result<Vector> {
    check_product("q", q, u.len())?;
    Ok(q * u)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &Vector) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Zero-based class `argmax_j (WQΩx)_j`, ties to the lowest index.
pub fn predict(w: &Mat, q: &Mat, omega: &Mat, x_col: &Vector) -> Result<usize> {
    let u = encode(omega, x_col)?;
    let z = structured_rep(q, &u)?;
    check_product("w", w, z.len())?;
    Ok(argmax(&(w * z)))
}

/// Nearest class prototype to `QΩx` in squared distance, ties to the
/// lowest index. Used when the classifier W is not trained.
pub fn predict_h_only(
    q: &Mat,
    omega: &Mat,
    prototypes: &[Vector],
    x_col: &Vector,
) -> Result<usize> {
    let z = structured_rep(q, &encode(omega, x_col)?)?;
    nearest_prototype(prototypes, &z)
}

fn nearest_prototype(prototypes: &[Vector], z: &Vector) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, p) in prototypes.iter().enumerate() {
        if p.len() != z.len() {
            return Err(SadlError::DimensionMismatch(format!(
                "prototype {k} has length {}, representation has {}",
                p.len(),
                z.len()
            )));
        }
        let d = (p - z).norm_squared();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((k, d));
        }
    }
    best.map(|(k, _)| k)
        .ok_or_else(|| SadlError::DimensionMismatch("no prototypes given".into()))
}

/// Anything that maps a sample to per-class scores and a label.
pub trait Predictor {
    fn classes(&self) -> usize;
    fn features(&self) -> usize;
    /// Per-class scores for one sample; larger is better.
    fn scores(&self, x_col: &Vector) -> Result<Vector>;
    fn predict(&self, x_col: &Vector) -> Result<usize>;
}

/// The learned `(Ω, Q, W)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub omega: Mat,
    pub q: Mat,
    pub w: Mat,
}

impl Classifier {
    pub fn new(omega: Mat, q: Mat, w: Mat) -> Result<Self> {
        if q.ncols() != omega.nrows() || w.ncols() != q.nrows() {
            return Err(SadlError::DimensionMismatch(format!(
                "omega {}x{}, q {}x{}, w {}x{} do not chain",
                omega.nrows(),
                omega.ncols(),
                q.nrows(),
                q.ncols(),
                w.nrows(),
                w.ncols()
            )));
        }
        Ok(Classifier { omega, q, w })
    }

    pub fn from_state(state: &ModelState) -> Self {
        Classifier {
            omega: state.omega.clone(),
            q: state.q.clone(),
            w: state.w.clone(),
        }
    }

    /// `WQΩ` as one `c × m` matrix.
    pub fn fused(&self) -> Mat {
        &self.w * (&self.q * &self.omega)
    }

    /// Scores for every column of `x` (`c × n`).
    pub fn score_matrix(&self, x: &Mat) -> Result<Mat> {
        check_product("omega", &self.omega, x.nrows())?;
        Ok(&self.w * (&self.q * (&self.omega * x)))
    }
}

impl Predictor for Classifier {
    fn classes(&self) -> usize {
        self.w.nrows()
    }

    fn features(&self) -> usize {
        self.omega.ncols()
    }

    fn scores(&self, x_col: &Vector) -> Result<Vector> {
        let u = encode(&self.omega, x_col)?;
        Ok(&self.w * structured_rep(&self.q, &u)?)
    }

    fn predict(&self, x_col: &Vector) -> Result<usize> {
        predict(&self.w, &self.q, &self.omega, x_col)
    }
}

/// `WQΩ` collapsed into one `c × m` matrix. Predictions are a single
/// pass over its rows with no allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedClassifier {
    pub fused: Mat,
}

impl FusedClassifier {
    pub fn new(model: &Classifier) -> Self {
        FusedClassifier { fused: model.fused() }
    }

    /// Class of a raw feature slice; `x.len()` must equal the feature count.
    pub fn predict_slice(&self, x: &[f64]) -> usize {
        let f = &self.fused;
        let c = f.nrows();
        let data = f.as_slice();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for i in 0..c {
            let mut acc = 0.0;
            for (j, &xj) in x.iter().enumerate() {
                acc += data[j * c + i] * xj;
            }
            if acc > best_score {
                best = i;
                best_score = acc;
            }
        }
        best
    }
}

impl Predictor for FusedClassifier {
    fn classes(&self) -> usize {
        self.fused.nrows()
    }

    fn features(&self) -> usize {
        self.fused.ncols()
    }

    fn scores(&self, x_col: &Vector) -> Result<Vector> {
        check_product("fused", &self.fused, x_col.len())?;
        Ok(&self.fused * x_col)
    }

    fn predict(&self, x_col: &Vector) -> Result<usize> {
        check_product("fused", &self.fused, x_col.len())?;
        Ok(self.predict_slice(x_col.as_slice()))
    }
}

/// `(Ω, Q)` with one structure prototype per class; scores are negated
/// squared distances.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeClassifier {
    pub omega: Mat,
    pub q: Mat,
    pub prototypes: Vec<Vector>,
}

impl PrototypeClassifier {
    pub fn new(omega: Mat, q: Mat, target: &StructureTarget) -> Self {
        PrototypeClassifier {
            omega,
            q,
            prototypes: target.prototypes(),
        }
    }
}

impl Predictor for PrototypeClassifier {
    fn classes(&self) -> usize {
        self.prototypes.len()
    }

    fn features(&self) -> usize {
        self.omega.ncols()
    }

    fn scores(&self, x_col: &Vector) -> Result<Vector> {
        let z = structured_rep(&self.q, &encode(&self.omega, x_col)?)?;
        Ok(Vector::from_iterator(
            self.prototypes.len(),
            self.prototypes.iter().map(|p| -(p - &z).norm_squared()),
        ))
    }

    fn predict(&self, x_col: &Vector) -> Result<usize> {
        predict_h_only(&self.q, &self.omega, &self.prototypes, x_col)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    /// Zero-based predicted class per test sample.
    pub predicted: Vec<usize>,
    /// `c × n_test` scores, column-major.
    #[serde(skip)]
    pub scores: Mat,
    pub accuracy: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<u64>>,
    /// Mean wall-clock seconds to encode and classify one sample.
    pub seconds_per_sample: f64,
}

impl PredictionReport {
    pub fn correct(&self) -> u64 {
        (0..self.confusion.len()).map(|k| self.confusion[k][k]).sum()
    }
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize], classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        m[t][p] += 1;
    }
    m
}

/// Classifies every column of `x_test` one sample at a time and compares
/// against zero-based `labels`.
pub fn evaluate<P: Predictor + ?Sized>(
    model: &P,
    x_test: &DataMatrix,
    labels: &[usize],
) -> Result<PredictionReport> {
    let n = x_test.samples();
    if labels.is_empty() {
        return Err(SadlError::EmptyTestSet);
    }
    if labels.len() != n {
        return Err(SadlError::DimensionMismatch(format!(
            "{} labels for {n} test samples",
            labels.len()
        )));
    }
    if x_test.features() != model.features() {
        return Err(SadlError::DimensionMismatch(format!(
            "model expects {} features, test data has {}",
            model.features(),
            x_test.features()
        )));
    }
    let c = model.classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(SadlError::LabelOutOfRange { label: bad + 1, classes: c });
    }
    let columns: Vec<Vector> = x_test.as_matrix().column_iter().map(|c| c.into_owned()).collect();

    let start = Instant::now();
    let mut predicted = Vec::with_capacity(n);
    for col in &columns {
        predicted.push(model.predict(col)?);
    }
    let seconds_per_sample = start.elapsed().as_secs_f64() / n as f64;

    let mut scores = Mat::zeros(c, n);
    for (j, col) in columns.iter().enumerate() {
        scores.set_column(j, &model.scores(col)?);
    }
    let confusion = confusion_matrix(labels, &predicted, c);
    let correct: u64 = (0..c).map(|k| confusion[k][k]).sum();
    Ok(PredictionReport {
        predicted,
        scores,
        accuracy: correct as f64 / n as f64,
        confusion,
        seconds_per_sample,
    })
}

pub fn evaluate_dataset<P: Predictor + ?Sized>(
    model: &P,
    data: &LabeledDataset,
) -> Result<PredictionReport> {
    evaluate(model, &data.x, &data.labels)
}
