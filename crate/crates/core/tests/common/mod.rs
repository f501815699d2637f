#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sadl::data::{build_structure_target, one_hot_labels};
use sadl::{DataMatrix, Hyperparams, Mat, ModelState, Problem};

pub const M: usize = 6;
pub const N: usize = 10;
pub const R: usize = 8;
pub const S: usize = 9;
pub const C: usize = 3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// The small (m, n, r, s, c) = (6, 10, 8, 9, 3) instance used by the
/// invariant checks: labels cycle through the classes, H has three rows
/// per class.
pub fn small_problem(seed: u64) -> Problem {
    let mut g = rng(seed);
    let x = DataMatrix::new(gaussian(M, N, &mut g)).unwrap();
    let labels: Vec<usize> = (0..N).map(|j| j % C).collect();
    let h = build_structure_target(&labels, C, None, Some(S)).unwrap();
    let y = one_hot_labels(&labels, C).unwrap();
    Problem::new(&x, &h, &y).unwrap()
}

/// A state with every one of the eight variables drawn at random.
pub fn random_state(problem: &Problem, seed: u64) -> ModelState {
    let d = problem.dims(R);
    let mut g = rng(seed.wrapping_mul(31).wrapping_add(5));
    let mut st = ModelState::zeros(d);
    st.omega = gaussian(d.r, d.m, &mut g);
    st.u = gaussian(d.r, d.n, &mut g);
    st.q = gaussian(d.s, d.r, &mut g);
    st.w = gaussian(d.c, d.s, &mut g);
    st.eps1 = gaussian(d.s, d.n, &mut g);
    st.eps2 = gaussian(d.c, d.n, &mut g);
    st.z1 = gaussian(d.s, d.n, &mut g);
    st.z2 = gaussian(d.c, d.n, &mut g);
    st
}

fn mul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.ncols(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), b.ncols());
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut acc = 0.0;
            for k in 0..a.ncols() {
                acc += a[(i, k)] * b[(k, j)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

fn sum_sq(a: &Mat) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * a[(i, j)];
        }
    }
    acc
}

fn inner(a: &Mat, b: &Mat) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(i, j)];
        }
    }
    acc
}

fn sub(a: &Mat, b: &Mat) -> Mat {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] - b[(i, j)])
}

/// Smooth Lagrangian written out term by term with explicit loops.
pub fn naive_smooth_lagrangian(st: &ModelState, p: &Problem, hyper: &Hyperparams) -> f64 {
    let mu = hyper.mu();
    let h = p.h.as_ref().unwrap();
    let y = p.y.as_ref().unwrap();
    let fit = sub(&st.u, &mul(&st.omega, &p.x));
    let qu = mul(&st.q, &st.u);
    let r1 = sub(&sub(h, &qu), &st.eps1);
    let r2 = sub(&sub(y, &mul(&st.w, &qu)), &st.eps2);
    0.5 * sum_sq(&fit)
        + inner(&st.z1, &r1)
        + inner(&st.z2, &r2)
        + 0.5 * mu * (sum_sq(&r1) + sum_sq(&r2))
        + 0.5 * hyper.rho1 * sum_sq(&st.eps1)
        + 0.5 * hyper.rho2 * sum_sq(&st.eps2)
        + 0.5 * hyper.delta1 * sum_sq(&st.q)
        + 0.5 * hyper.delta2 * sum_sq(&st.w)
        + 0.5 * hyper.lambda2 * sum_sq(&st.omega)
}

pub fn naive_lagrangian(st: &ModelState, p: &Problem, hyper: &Hyperparams) -> f64 {
    let mut l1 = 0.0;
    for v in st.u.iter() {
        l1 += v.abs();
    }
    naive_smooth_lagrangian(st, p, hyper) + hyper.lambda1 * l1
}

pub fn variable_mut<'a>(st: &'a mut ModelState, name: &str) -> &'a mut Mat {
    match name {
        "U" => &mut st.u,
        "Q" => &mut st.q,
        "W" => &mut st.w,
        "Omega" => &mut st.omega,
        "Eps1" => &mut st.eps1,
        "Eps2" => &mut st.eps2,
        other => panic!("unknown variable {other}"),
    }
}

/// Central finite-difference gradient of the naive smooth Lagrangian.
pub fn fd_gradient(st: &ModelState, p: &Problem, hyper: &Hyperparams, name: &str, step: f64) -> Mat {
    let mut work = st.clone();
    let (rows, cols) = variable_mut(&mut work, name).shape();
    let mut g = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let orig = variable_mut(&mut work, name)[(i, j)];
            variable_mut(&mut work, name)[(i, j)] = orig + step;
            let plus = naive_smooth_lagrangian(&work, p, hyper);
            variable_mut(&mut work, name)[(i, j)] = orig - step;
            let minus = naive_smooth_lagrangian(&work, p, hyper);
            variable_mut(&mut work, name)[(i, j)] = orig;
            g[(i, j)] = (plus - minus) / (2.0 * step);
        }
    }
    g
}

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &Mat, b: &Mat) -> Mat {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(b.nrows(), n);
    let k = b.ncols();
    let mut aug: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| a[(i, j)]).collect();
            row.extend((0..k).map(|j| b[(i, j)]));
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        let pivot_row = aug[col].clone();
        let p = pivot_row[col];
        assert!(p != 0.0, "singular system");
        for row in aug.iter_mut().skip(col + 1) {
            let f = row[col] / p;
            if f != 0.0 {
                for (a, b) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                    *a -= f * b;
                }
            }
        }
    }
    let mut x = DMatrix::zeros(n, k);
    for j in 0..k {
        for i in (0..n).rev() {
            let mut acc = aug[i][n + j];
            for t in i + 1..n {
                acc -= aug[i][t] * x[(t, j)];
            }
            x[(i, j)] = acc / aug[i][i];
        }
    }
    x
}

/// `U Xᵀ (X Xᵀ + λ I)⁻¹` through a transposed dense solve.
pub fn reference_omega(u: &Mat, x: &Mat, lambda2: f64) -> Mat {
    let mut g = mul(x, &x.transpose());
    for i in 0..g.nrows() {
        g[(i, i)] += lambda2;
    }
    let rhs = mul(x, &u.transpose());
    gauss_solve(&g, &rhs).transpose()
}

/// Test accuracy of least-squares regression onto one-hot labels,
/// `W = Y Xᵀ (X Xᵀ + λI)⁻¹`, classifying by the largest output.
pub fn ridge_accuracy(
    x_train: &Mat,
    labels_train: &[usize],
    x_test: &Mat,
    labels_test: &[usize],
    classes: usize,
    lambda: f64,
) -> f64 {
    let mut y = DMatrix::zeros(classes, x_train.ncols());
    for (j, &l) in labels_train.iter().enumerate() {
        y[(l, j)] = 1.0;
    }
    let w = reference_omega(&y, x_train, lambda);
    let scores = mul(&w, x_test);
    let mut correct = 0;
    for (j, &l) in labels_test.iter().enumerate() {
        let mut best = 0;
        for i in 1..classes {
            if scores[(i, j)] > scores[(best, j)] {
                best = i;
            }
        }
        correct += usize::from(best == l);
    }
    correct as f64 / labels_test.len() as f64
}

/// Preallocated ISTA solver for `min ½‖x − Du‖² + λ‖u‖₁`.
pub struct Ista {
    gram: Mat,
    dt: Mat,
    step: f64,
    lambda: f64,
    u: nalgebra::DVector<f64>,
    grad: nalgebra::DVector<f64>,
    dtx: nalgebra::DVector<f64>,
}

impl Ista {
    pub fn new(d: &Mat, lambda: f64) -> Self {
        let gram = d.transpose() * d;
        let lip = gram.clone().symmetric_eigen().eigenvalues.max();
        let r = d.ncols();
        Ista {
            gram,
            dt: d.transpose(),
            step: 1.0 / lip,
            lambda,
            u: nalgebra::DVector::zeros(r),
            grad: nalgebra::DVector::zeros(r),
            dtx: nalgebra::DVector::zeros(r),
        }
    }

    pub fn solve(&mut self, x: &nalgebra::DVector<f64>, iters: usize) -> &nalgebra::DVector<f64> {
        self.dtx.gemv(1.0, &self.dt, x, 0.0);
        self.u.fill(0.0);
        let theta = self.step * self.lambda;
        for _ in 0..iters {
            self.grad.copy_from(&self.dtx);
            self.grad.gemv(1.0, &self.gram, &self.u, -1.0);
            self.u.axpy(-self.step, &self.grad, 1.0);
            for v in self.u.iter_mut() {
                *v = v.signum() * (v.abs() - theta).max(0.0);
            }
        }
        &self.u
    }
}

pub fn rel_err(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}
