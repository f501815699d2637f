//! Domain types shared by the centralized and distributed trainers.
//!
//! Samples are stored as columns everywhere: `X` is `m × n`, codes `U` are
//! `r × n`, the structure target `H` is `s × n` and the label matrix `Y` is
//! `c × n`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SadlError};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub(crate) fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Mat {
    // from_fn walks column-major, so the draw order is fixed by the shape
    Mat::from_fn(rows, cols, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        v * scale
    })
}

/// Feature matrix, one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix(Mat);

impl DataMatrix {
    pub fn new(values: Mat) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(SadlError::InvalidData(format!(
                "data matrix must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if !all_finite(&values) {
            return Err(SadlError::InvalidData(
                "data matrix contains non-finite entries".into(),
            ));
        }
        Ok(DataMatrix(values))
    }

    pub fn features(&self) -> usize {
        self.0.nrows()
    }

    pub fn samples(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &Mat {
        &self.0
    }

    pub fn into_matrix(self) -> Mat {
        self.0
    }

    pub fn select_columns(&self, cols: &[usize]) -> DataMatrix {
        DataMatrix(self.0.select_columns(cols))
    }
}

/// One-hot class indicator matrix `Y` (`c × n`).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix(Mat);

impl LabelMatrix {
    pub fn new(values: Mat) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(SadlError::InvalidData(format!(
                "label matrix needs at least 2 classes, got {}",
                values.nrows()
            )));
        }
        for (j, col) in values.column_iter().enumerate() {
            let ones = col.iter().filter(|&&v| v == 1.0).count();
            let zeros = col.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != col.len() {
                return Err(SadlError::InvalidData(format!(
                    "label column {j} is not one-hot"
                )));
            }
        }
        Ok(LabelMatrix(values))
    }

    pub fn classes(&self) -> usize {
        self.0.nrows()
    }

    pub fn samples(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &Mat {
        &self.0
    }

    /// Zero-based class index of every column.
    pub fn class_indices(&self) -> Vec<usize> {
        self.0.column_iter().map(|c| c.imax()).collect()
    }

    pub fn select_columns(&self, cols: &[usize]) -> LabelMatrix {
        LabelMatrix(self.0.select_columns(cols))
    }
}

/// Binary block target `H` (`s × n`). Class `k` owns the contiguous row block
/// `blocks[k]`; column `j` is one exactly on the block of sample `j`'s class.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureTarget {
    values: Mat,
    blocks: Vec<Range<usize>>,
}

impl StructureTarget {
    /// Builds `H` from zero-based class indices and one row count per class.
    pub fn from_blocks(classes: &[usize], rows_per_class: &[usize]) -> Result<Self> {
        if rows_per_class.is_empty() {
            return Err(SadlError::InvalidBlockSpec("no classes given".into()));
        }
        if let Some(k) = rows_per_class.iter().position(|&r| r == 0) {
            return Err(SadlError::InvalidBlockSpec(format!(
                "class {} has an empty row block",
                k + 1
            )));
        }
        let mut blocks = Vec::with_capacity(rows_per_class.len());
        let mut start = 0;
        for &rows in rows_per_class {
            blocks.push(start..start + rows);
            start += rows;
        }
        let mut values = Mat::zeros(start, classes.len());
        for (j, &k) in classes.iter().enumerate() {
            let block = blocks.get(k).ok_or(SadlError::LabelOutOfRange {
                label: k + 1,
                classes: rows_per_class.len(),
            })?;
            for i in block.clone() {
                values[(i, j)] = 1.0;
            }
        }
        Ok(StructureTarget { values, blocks })
    }

    pub fn as_matrix(&self) -> &Mat {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn samples(&self) -> usize {
        self.values.ncols()
    }

    pub fn classes(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    /// The column pattern every sample of `class` is driven toward.
    pub fn prototype(&self, class: usize) -> Vector {
        let mut v = Vector::zeros(self.rows());
        for i in self.blocks[class].clone() {
            v[i] = 1.0;
        }
        v
    }

    pub fn prototypes(&self) -> Vec<Vector> {
        (0..self.classes()).map(|k| self.prototype(k)).collect()
    }

    /// Restriction to a subset of samples; the row blocks are kept.
    pub fn select_columns(&self, cols: &[usize]) -> StructureTarget {
        StructureTarget {
            values: self.values.select_columns(cols),
            blocks: self.blocks.clone(),
        }
    }
}

/// Problem dimensions. `r` (dictionary size) is chosen by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub s: usize,
    pub c: usize,
}

/// Dimensions implied by a validated problem, before `r` is picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemSummary {
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub c: usize,
}

impl ProblemSummary {
    pub fn with_atoms(self, r: usize) -> Dims {
        Dims {
            m: self.m,
            n: self.n,
            r,
            s: self.s,
            c: self.c,
        }
    }
}

pub fn validate_problem(
    x: &DataMatrix,
    h: &StructureTarget,
    y: &LabelMatrix,
) -> Result<ProblemSummary> {
    let n = x.samples();
    if h.samples() != n || y.samples() != n {
        return Err(SadlError::DimensionMismatch(format!(
            "sample counts differ: X has {n}, H has {}, Y has {}",
            h.samples(),
            y.samples()
        )));
    }
    if h.classes() != y.classes() {
        return Err(SadlError::DimensionMismatch(format!(
            "H has {} class blocks but Y has {} classes",
            h.classes(),
            y.classes()
        )));
    }
    for (j, k) in y.class_indices().into_iter().enumerate() {
        if h.as_matrix().column(j) != h.prototype(k) {
            return Err(SadlError::DimensionMismatch(format!(
                "column {j} of H does not match the block of class {}",
                k + 1
            )));
        }
    }
    Ok(ProblemSummary {
        m: x.features(),
        n,
        s: h.rows(),
        c: y.classes(),
    })
}

/// Which coupling constraints take part in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terms {
    /// `H = QU + ε1` and `Y = WQU + ε2`.
    Both,
    /// Only `H = QU + ε1`; `W` is never touched.
    StructureOnly,
    /// Only `Y = WQU + ε2` with `Q` held fixed.
    LabelOnly,
}

/// Training data as dense matrices. `h` or `y` is absent for the ablation
/// variants that drop the corresponding constraint.
#[derive(Debug, Clone)]
pub struct Problem {
    pub x: Mat,
    pub h: Option<Mat>,
    pub y: Option<Mat>,
    /// Number of classes, also recorded when `y` is absent.
    pub classes: usize,
    /// Rows of the structured space, also recorded when `h` is absent.
    pub structure_rows: usize,
}

impl Problem {
    pub fn new(x: &DataMatrix, h: &StructureTarget, y: &LabelMatrix) -> Result<Self> {
        let summary = validate_problem(x, h, y)?;
        Ok(Problem {
            x: x.as_matrix().clone(),
            h: Some(h.as_matrix().clone()),
            y: Some(y.as_matrix().clone()),
            classes: summary.c,
            structure_rows: summary.s,
        })
    }

    /// Structure-only problem: `Y` never enters the objective.
    pub fn structure_only(x: &DataMatrix, h: &StructureTarget) -> Result<Self> {
        if h.samples() != x.samples() {
            return Err(SadlError::DimensionMismatch(format!(
                "X has {} samples, H has {}",
                x.samples(),
                h.samples()
            )));
        }
        Ok(Problem {
            x: x.as_matrix().clone(),
            h: Some(h.as_matrix().clone()),
            y: None,
            classes: h.classes(),
            structure_rows: h.rows(),
        })
    }

    /// Label-only problem: no structure target is built, `Q` is an
    /// `s × r` identity-padded map that stays fixed.
    pub fn label_only(x: &DataMatrix, y: &LabelMatrix, structure_rows: usize) -> Result<Self> {
        if y.samples() != x.samples() {
            return Err(SadlError::DimensionMismatch(format!(
                "X has {} samples, Y has {}",
                x.samples(),
                y.samples()
            )));
        }
        Ok(Problem {
            x: x.as_matrix().clone(),
            h: None,
            y: Some(y.as_matrix().clone()),
            classes: y.classes(),
            structure_rows,
        })
    }

    /// Arbitrary real-valued targets with only shape checks. Used for
    /// numerical experiments where `H` and `Y` need not be binary.
    pub fn from_raw(x: Mat, h: Mat, y: Mat) -> Result<Self> {
        let n = x.ncols();
        if h.ncols() != n || y.ncols() != n {
            return Err(SadlError::DimensionMismatch(format!(
                "sample counts differ: X has {n}, H has {}, Y has {}",
                h.ncols(),
                y.ncols()
            )));
        }
        let (s, c) = (h.nrows(), y.nrows());
        Ok(Problem {
            x,
            h: Some(h),
            y: Some(y),
            classes: c,
            structure_rows: s,
        })
    }

    pub fn terms(&self) -> Terms {
        match (&self.h, &self.y) {
            (Some(_), Some(_)) => Terms::Both,
            (Some(_), None) => Terms::StructureOnly,
            (None, Some(_)) => Terms::LabelOnly,
            (None, None) => unreachable!("a problem always carries at least one target"),
        }
    }

    pub fn dims(&self, r: usize) -> Dims {
        Dims {
            m: self.x.nrows(),
            n: self.x.ncols(),
            r,
            s: self.structure_rows,
            c: self.classes,
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Problem {
        Problem {
            x: self.x.select_columns(cols),
            h: self.h.as_ref().map(|h| h.select_columns(cols)),
            y: self.y.as_ref().map(|y| y.select_columns(cols)),
            classes: self.classes,
            structure_rows: self.structure_rows,
        }
    }
}

/// All learned and auxiliary arrays of the augmented Lagrangian.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// Analysis dictionary Ω, `r × m`.
    pub omega: Mat,
    /// Sparse codes U, `r × n`.
    pub u: Mat,
    /// Structure map Q, `s × r`.
    pub q: Mat,
    /// Classifier W, `c × s`.
    pub w: Mat,
    /// Structure slack ε1, `s × n`.
    pub eps1: Mat,
    /// Label slack ε2, `c × n`.
    pub eps2: Mat,
    /// Dual Z1, `s × n`.
    pub z1: Mat,
    /// Dual Z2, `c × n`.
    pub z2: Mat,
}

impl ModelState {
    pub fn zeros(d: Dims) -> Self {
        ModelState {
            omega: Mat::zeros(d.r, d.m),
            u: Mat::zeros(d.r, d.n),
            q: Mat::zeros(d.s, d.r),
            w: Mat::zeros(d.c, d.s),
            eps1: Mat::zeros(d.s, d.n),
            eps2: Mat::zeros(d.c, d.n),
            z1: Mat::zeros(d.s, d.n),
            z2: Mat::zeros(d.c, d.n),
        }
    }

    /// Ω, Q, W drawn from a seeded standard normal scaled by 1/√(input dim);
    /// U, ε and the duals start at zero.
    pub fn init(d: Dims, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut state = ModelState::zeros(d);
        state.omega = gaussian_matrix(d.r, d.m, 1.0 / (d.m as f64).sqrt(), &mut rng);
        state.q = gaussian_matrix(d.s, d.r, 1.0 / (d.r as f64).sqrt(), &mut rng);
        state.w = gaussian_matrix(d.c, d.s, 1.0 / (d.s as f64).sqrt(), &mut rng);
        state
    }

    /// Identity-padded `s × r` map: ones on the leading diagonal.
    pub fn identity_map(s: usize, r: usize) -> Mat {
        Mat::identity(s, r)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            m: self.omega.ncols(),
            n: self.u.ncols(),
            r: self.omega.nrows(),
            s: self.q.nrows(),
            c: self.w.nrows(),
        }
    }

    pub fn check_dims(&self, d: Dims) -> Result<()> {
        let expect = [
            ("omega", &self.omega, (d.r, d.m)),
            ("u", &self.u, (d.r, d.n)),
            ("q", &self.q, (d.s, d.r)),
            ("w", &self.w, (d.c, d.s)),
            ("eps1", &self.eps1, (d.s, d.n)),
            ("eps2", &self.eps2, (d.c, d.n)),
            ("z1", &self.z1, (d.s, d.n)),
            ("z2", &self.z2, (d.c, d.n)),
        ];
        for (name, m, shape) in expect {
            if m.shape() != shape {
                return Err(SadlError::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {}x{}",
                    m.nrows(),
                    m.ncols(),
                    shape.0,
                    shape.1
                )));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.variables().iter().all(|(_, m)| all_finite(m))
    }

    /// The eight arrays in a fixed order, paired with their names.
    pub fn variables(&self) -> [(&'static str, &Mat); 8] {
        [
            ("omega", &self.omega),
            ("u", &self.u),
            ("q", &self.q),
            ("w", &self.w),
            ("eps1", &self.eps1),
            ("eps2", &self.eps2),
            ("z1", &self.z1),
            ("z2", &self.z2),
        ]
    }
}

/// Linearization steps η for the U, Q and W updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub eta_u: f64,
    pub eta_q: f64,
    pub eta_w: f64,
}

impl StepSizes {
    pub fn new(eta_u: f64, eta_q: f64, eta_w: f64) -> Result<Self> {
        for (name, v) in [("eta_u", eta_u), ("eta_q", eta_q), ("eta_w", eta_w)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SadlError::InvalidHyper(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(StepSizes { eta_u, eta_q, eta_w })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepMode {
    /// Recompute η from the current Lipschitz bounds before every block
    /// update, scaled by `1 + margin`.
    Auto { margin: f64 },
    /// Hold η fixed for the whole run.
    Fixed(StepSizes),
}

/// Form of the slack and dual updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateForm {
    /// Exact slack minimizer `(Z + μR)/(ρ + μ)` and duals including `−ε`.
    Consistent,
    /// Denominator `ρ − 1` and duals without the slack term, kept only for
    /// comparison runs.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub delta1: f64,
    pub delta2: f64,
    /// Penalty μ; `None` resolves to `2·max(ρ1, ρ2)`.
    pub mu: Option<f64>,
    pub steps: StepMode,
    pub max_iter: usize,
    pub tol: f64,
    pub form: UpdateForm,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda1: 0.001,
            lambda2: 0.005,
            rho1: 1.0,
            rho2: 1.0,
            delta1: 1.0,
            delta2: 1.0,
            mu: None,
            steps: StepMode::Auto { margin: 0.1 },
            max_iter: 300,
            tol: 1e-6,
            form: UpdateForm::Consistent,
        }
    }
}

impl Hyperparams {
    pub fn mu(&self) -> f64 {
        self.mu.unwrap_or(2.0 * self.rho1.max(self.rho2))
    }

    /// `μ ≥ √2·max(ρ1, ρ2)`, under which the Lagrangian sequence is
    /// nonnegative and nonincreasing for large enough steps.
    pub fn satisfies_monotone_condition(&self) -> bool {
        self.mu() >= std::f64::consts::SQRT_2 * self.rho1.max(self.rho2)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda1", self.lambda1),
            ("rho1", self.rho1),
            ("rho2", self.rho2),
            ("mu", self.mu()),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SadlError::InvalidHyper(format!("{name} must be > 0, got {v}")));
            }
        }
        let nonneg = [
            ("lambda2", self.lambda2),
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("tol", self.tol),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SadlError::InvalidHyper(format!("{name} must be >= 0, got {v}")));
            }
        }
        match self.steps {
            StepMode::Auto { margin } if !(margin >= 0.0 && margin.is_finite()) => {
                return Err(SadlError::InvalidHyper(format!(
                    "step margin must be >= 0, got {margin}"
                )))
            }
            StepMode::Fixed(s) => {
                StepSizes::new(s.eta_u, s.eta_q, s.eta_w)?;
            }
            _ => {}
        }
        Ok(())
    }

    /// Validation plus the monotonicity hypothesis on μ.
    pub fn validate_monotone(&self) -> Result<()> {
        self.validate()?;
        if !self.satisfies_monotone_condition() {
            return Err(SadlError::InvalidHyper(format!(
                "mu = {} is below sqrt(2)*max(rho1, rho2) = {}",
                self.mu(),
                std::f64::consts::SQRT_2 * self.rho1.max(self.rho2)
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistHyperparams {
    pub base: Hyperparams,
    pub n_clusters: usize,
    pub xi1: f64,
    pub xi2: f64,
    pub xi3: f64,
    /// Geometric growth factor applied to μ and the ξ's each outer round.
    pub growth_rho: f64,
    pub mu_max: f64,
    pub xi1_max: f64,
    pub xi2_max: f64,
    pub xi3_max: f64,
    /// Partition and initialization seed.
    pub seed: u64,
    /// Worker threads; `0` means one per cluster.
    pub threads: usize,
}

impl Default for DistHyperparams {
    fn default() -> Self {
        let base = Hyperparams::default();
        DistHyperparams {
            mu_max: 10.0 * base.mu(),
            base,
            n_clusters: 2,
            xi1: 0.1,
            xi2: 0.1,
            xi3: 0.1,
            growth_rho: 1.01,
            xi1_max: 1.0,
            xi2_max: 1.0,
            xi3_max: 1.0,
            seed: 0,
            threads: 0,
        }
    }
}

impl DistHyperparams {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.n_clusters == 0 {
            return Err(SadlError::InvalidHyper("n_clusters must be >= 1".into()));
        }
        if !(self.growth_rho >= 1.0 && self.growth_rho.is_finite()) {
            return Err(SadlError::InvalidHyper(format!(
                "growth_rho must be >= 1, got {}",
                self.growth_rho
            )));
        }
        let pairs = [
            ("mu", self.base.mu(), self.mu_max),
            ("xi1", self.xi1, self.xi1_max),
            ("xi2", self.xi2, self.xi2_max),
            ("xi3", self.xi3, self.xi3_max),
        ];
        for (name, init, cap) in pairs {
            if !(init >= 0.0 && init.is_finite()) {
                return Err(SadlError::InvalidHyper(format!("{name} must be >= 0, got {init}")));
            }
            if cap.is_nan() || cap < init {
                return Err(SadlError::InvalidHyper(format!(
                    "{name}_max = {cap} is below the initial value {init}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub lagrangian: f64,
    /// ‖H − QU − ε1‖_F
    pub res_h: f64,
    /// ‖Y − WQU − ε2‖_F
    pub res_y: f64,
    /// ‖Z1 − ρ1ε1‖_F
    pub dual_gap1: f64,
    /// ‖Z2 − ρ2ε2‖_F
    pub dual_gap2: f64,
    /// Successive-change norms in [`ModelState::variables`] order.
    pub deltas: [f64; 8],
    pub steps: StepSizes,
    /// max_t ‖Ω_t − Ω‖ for distributed runs, 0 otherwise.
    pub consensus_gap: f64,
}

impl IterRecord {
    pub fn max_delta(&self) -> f64 {
        self.deltas.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Lagrangian at the starting point.
    pub initial_lagrangian: f64,
    pub records: Vec<IterRecord>,
    pub converged: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn paper_h() -> StructureTarget {
        StructureTarget::from_blocks(&[0, 0, 0, 1, 1, 2, 2], &[3, 2, 2]).unwrap()
    }

    fn one_hot(classes: &[usize], c: usize) -> LabelMatrix {
        let mut y = Mat::zeros(c, classes.len());
        for (j, &k) in classes.iter().enumerate() {
            y[(k, j)] = 1.0;
        }
        LabelMatrix::new(y).unwrap()
    }

    #[test]
    fn validate_seven_sample_example() {
        let x = DataMatrix::new(Mat::from_fn(4, 7, |i, j| (i + j) as f64)).unwrap();
        let y = one_hot(&[0, 0, 0, 1, 1, 2, 2], 3);
        let s = validate_problem(&x, &paper_h(), &y).unwrap();
        assert_eq!(s, ProblemSummary { m: 4, n: 7, s: 7, c: 3 });
    }

    #[test]
    fn validate_minimal_case() {
        let x = DataMatrix::new(Mat::from_element(2, 1, 1.0)).unwrap();
        let h = StructureTarget {
            values: Mat::from_element(1, 1, 1.0),
            blocks: vec![0..1, 1..1],
        };
        let y = one_hot(&[0], 2);
        let s = validate_problem(&x, &h, &y).unwrap();
        assert_eq!((s.m, s.n, s.s, s.c), (2, 1, 1, 2));
    }

    #[test]
    fn validate_rejects_column_disagreement() {
        let x = DataMatrix::new(Mat::zeros(4, 7)).unwrap();
        let y = one_hot(&[0, 0, 1, 1, 2, 2], 3);
        assert!(matches!(
            validate_problem(&x, &paper_h(), &y),
            Err(SadlError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn validate_rejects_class_disagreement() {
        let x = DataMatrix::new(Mat::zeros(4, 7)).unwrap();
        let y = one_hot(&[0, 0, 1, 1, 1, 2, 2], 3);
        assert!(matches!(
            validate_problem(&x, &paper_h(), &y),
            Err(SadlError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn data_matrix_rejects_nan() {
        let mut m = Mat::zeros(2, 2);
        m[(1, 1)] = f64::NAN;
        assert!(DataMatrix::new(m).is_err());
        assert!(DataMatrix::new(Mat::zeros(0, 3)).is_err());
    }

    #[test]
    fn label_matrix_rejects_non_one_hot() {
        assert!(LabelMatrix::new(Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0])).is_err());
        assert!(LabelMatrix::new(Mat::from_row_slice(1, 2, &[1.0, 1.0])).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let d = Dims { m: 3, n: 4, r: 5, s: 6, c: 2 };
        let a = ModelState::init(d, 7);
        assert_eq!(a, ModelState::init(d, 7));
        assert_ne!(a, ModelState::init(d, 8));
        assert_eq!(a.u, Mat::zeros(5, 4));
        assert_eq!(a.z1, Mat::zeros(6, 4));
    }

    #[test]
    fn hyper_defaults_meet_monotone_condition() {
        let h = Hyperparams::default();
        assert_eq!(h.mu(), 2.0);
        h.validate_monotone().unwrap();
        let low = Hyperparams { mu: Some(1.0), ..h };
        assert!(low.validate_monotone().is_err());
        let bad = Hyperparams { lambda1: 0.0, ..h };
        assert!(matches!(bad.validate(), Err(SadlError::InvalidHyper(_))));
    }

    #[test]
    fn dist_caps_checked() {
        let d = DistHyperparams { xi1_max: 0.01, ..Default::default() };
        assert!(d.validate().is_err());
        DistHyperparams::default().validate().unwrap();
    }

    proptest! {
        #[test]
        fn state_shapes_follow_dims(m in 1usize..6, n in 1usize..6, r in 1usize..6,
                                    s in 1usize..6, c in 1usize..6, seed in 0u64..100) {
            let d = Dims { m, n, r, s, c };
            let st = ModelState::init(d, seed);
            prop_assert_eq!(st.dims(), d);
            prop_assert!(st.check_dims(d).is_ok());
            prop_assert!(st.is_finite());
        }

        #[test]
        fn sorted_target_is_block_diagonal(labels in proptest::collection::vec(0usize..4, 1..30),
                                           seed in 0u64..1000) {
            let c = 4;
            let counts: Vec<usize> = (0..c).map(|k| labels.iter().filter(|&&l| l == k).count().max(1)).collect();
            // permute, then re-sort by class
            let mut order: Vec<usize> = (0..labels.len()).collect();
            let mut rng = seeded_rng(seed);
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            let shuffled: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
            let mut sorted = shuffled.clone();
            sorted.sort();
            let h = StructureTarget::from_blocks(&sorted, &counts).unwrap();
            for (j, &k) in sorted.iter().enumerate() {
                for i in 0..h.rows() {
                    let inside = h.blocks()[k].contains(&i);
                    prop_assert_eq!(h.as_matrix()[(i, j)], if inside { 1.0 } else { 0.0 });
                }
            }
        }
    }
}
