//! Linearized alternating-direction solver for structured analysis
//! dictionary learning.
//!
//! The augmented Lagrangian is
//!
//! ```text
//! L = ½‖U − ΩX‖² + λ1‖U‖₁
//!   + ⟨Z1, H − QU − ε1⟩ + ⟨Z2, Y − WQU − ε2⟩
//!   + μ/2 (‖H − QU − ε1‖² + ‖Y − WQU − ε2‖²)
//!   + ρ1/2‖ε1‖² + ρ2/2‖ε2‖² + δ1/2‖Q‖² + δ2/2‖W‖² + λ2/2‖Ω‖²
//! ```
//!
//! One iteration updates U (proximal gradient), Q and W (gradient steps),
//! Ω (closed form), ε1, ε2 (exact minimizers) and finally the duals. With the
//! exact slack minimizers the duals satisfy `Z1 = ρ1ε1`, `Z2 = ρ2ε2` after
//! every iteration.

use nalgebra::SymmetricEigen;

use crate::error::{Result, SadlError};
use crate::model::{
    all_finite, Hyperparams, IterRecord, Mat, ModelState, Problem, StepMode, StepSizes, Terms,
    TrainTrace, UpdateForm,
};

/// Elementwise `sign(v)·max(|v| − θ, 0)`.
pub fn soft_threshold(m: &Mat, theta: f64) -> Mat {
    m.map(|v| shrink(v, theta))
}

#[inline]
fn shrink(v: f64, theta: f64) -> f64 {
    if v > theta {
        v - theta
    } else if v < -theta {
        v + theta
    } else {
        0.0
    }
}

/// Variables with respect to which [`smooth_grad`] can differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variable {
    U,
    Q,
    W,
    Omega,
    Eps1,
    Eps2,
}

/// Constraint residuals `H − QU − ε1` and `Y − WQU − ε2`, when the
/// corresponding target is present.
#[derive(Debug, Clone)]
pub struct Residuals {
    pub structure: Option<Mat>,
    pub label: Option<Mat>,
}

pub fn residuals(state: &ModelState, problem: &Problem) -> Residuals {
    let qu = &state.q * &state.u;
    let structure = problem.h.as_ref().map(|h| h - &qu - &state.eps1);
    let label = problem.y.as_ref().map(|y| y - &state.w * &qu - &state.eps2);
    Residuals { structure, label }
}

/// `Z + μR` for both constraints; these drive every linearized step.
fn dual_pressure(state: &ModelState, problem: &Problem, mu: f64) -> (Option<Mat>, Option<Mat>) {
    let r = residuals(state, problem);
    (
        r.structure.map(|r1| &state.z1 + r1 * mu),
        r.label.map(|r2| &state.z2 + r2 * mu),
    )
}

fn check_state(state: &ModelState, problem: &Problem) -> Result<()> {
    let d = problem.dims(state.omega.nrows());
    state.check_dims(d)
}

fn finite_or(m: Mat, variable: &'static str) -> Result<Mat> {
    if all_finite(&m) {
        Ok(m)
    } else {
        Err(SadlError::NonFiniteUpdate { variable })
    }
}

/// The three pieces of ∇_U L_s: data term, structure term and label term.
pub fn grad_u_parts(
    state: &ModelState,
    problem: &Problem,
    mu: f64,
) -> Result<(Mat, Mat, Mat)> {
    check_state(state, problem)?;
    let (a1, a2) = dual_pressure(state, problem, mu);
    let (r, n) = state.u.shape();
    let u1 = &state.u - &state.omega * &problem.x;
    let u2 = match a1 {
        Some(a1) => -(state.q.transpose() * a1),
        None => Mat::zeros(r, n),
    };
    let u3 = match a2 {
        Some(a2) => -(state.q.transpose() * (state.w.transpose() * a2)),
        None => Mat::zeros(r, n),
    };
    Ok((u1, u2, u3))
}

/// Proximal-gradient step on U with step `1/(μη_U)`.
pub fn update_u(
    state: &ModelState,
    problem: &Problem,
    hyper: &Hyperparams,
    steps: &StepSizes,
) -> Result<Mat> {
    let mu = hyper.mu();
    let (u1, u2, u3) = grad_u_parts(state, problem, mu)?;
    let scale = mu * steps.eta_u;
    let moved = &state.u - (u1 + u2 + u3) / scale;
    finite_or(soft_threshold(&moved, hyper.lambda1 / scale), "u")
}

fn grad_q(state: &ModelState, problem: &Problem, hyper: &Hyperparams) -> Mat {
    let (a1, a2) = dual_pressure(state, problem, hyper.mu());
    let ut = state.u.transpose();
    let mut g = &state.q * hyper.delta1;
    if let Some(a1) = a1 {
        g -= a1 * &ut;
    }
    if let Some(a2) = a2 {
        g -= state.w.transpose() * a2 * &ut;
    }
    g
}

fn grad_w(state: &ModelState, problem: &Problem, hyper: &Hyperparams) -> Mat {
    let (_, a2) = dual_pressure(state, problem, hyper.mu());
    let mut g = &state.w * hyper.delta2;
    if let Some(a2) = a2 {
        let qu = &state.q * &state.u;
        g -= a2 * qu.transpose();
    }
    g
}

/// Gradient step on Q with step `1/(μη_Q)`.
pub fn update_q(
    state: &ModelState,
    problem: &Problem,
    hyper: &Hyperparams,
    steps: &StepSizes,
) -> Result<Mat> {
    check_state(state, problem)?;
    let g = grad_q(state, problem, hyper);
    finite_or(&state.q - g / (hyper.mu() * steps.eta_q), "q")
}

/// Gradient step on W with step `1/(μη_W)`.
pub fn update_w(
    state: &ModelState,
    problem: &Problem,
    hyper: &Hyperparams,
    steps: &StepSizes,
) -> Result<Mat> {
    check_state(state, problem)?;
    let g = grad_w(state, problem, hyper);
    finite_or(&state.w - g / (hyper.mu() * steps.eta_w), "w")
}

/// Solves `Ω·G = B` for symmetric positive (semi)definite `G`, where
/// `G = XXᵀ + ridge·I`. Returns Ω (`r × m`).
pub(crate) fn solve_ridge_system(g: Mat, b: &Mat, what: &str) -> Result<Mat> {
    let chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| SadlError::SingularSystem(format!("{what}: Gram matrix is not positive definite")))?;
    // Ω G = B  <=>  G Ωᵀ = Bᵀ
    let bt = b.transpose();
    let mut omega_t = chol.solve(&bt);
    let bound = 1e-8 * (1.0 + b.norm());
    let mut resid = (&g * &omega_t - &bt).norm();
    if resid > bound {
        // one round of iterative refinement
        let correction = chol.solve(&(&bt - &g * &omega_t));
        omega_t += correction;
        resid = (&g * &omega_t - &bt).norm();
    }
    if resid.is_nan() || resid > bound {
        return Err(SadlError::SingularSystem(format!(
            "{what}: normal-equation residual {resid:e} exceeds {bound:e}"
        )));
    }
    finite_or(omega_t.transpose(), "omega")
}

/// Closed-form dictionary `Ω = UXᵀ(XXᵀ + λ2 I)⁻¹`.
pub fn update_omega(u: &Mat, x: &Mat, lambda2: f64) -> Result<Mat> {
    if u.ncols() != x.ncols() {
        return Err(SadlError::DimensionMismatch(format!(
            "U has {} columns, X has {}",
            u.ncols(),
            x.ncols()
        )));
    }
    let m = x.nrows();
    if lambda2 == 0.0 && m > x.ncols() {
        return Err(SadlError::SingularSystem(format!(
            "XXᵀ is {m}x{m} with rank at most {} and lambda2 = 0",
            x.ncols()
        )));
    }
    let g = x * x.transpose() + Mat::identity(m, m) * lambda2;
    solve_ridge_system(g, &(u * x.transpose()), "omega update")
}

fn slack_update(
    z: &Mat,
    target: &Mat,
    fitted: &Mat,
    rho: f64,
    mu: f64,
    form: UpdateForm,
    variable: &'static str,
) -> Result<Mat> {
    let denom = match form {
        UpdateForm::Consistent => rho + mu,
        UpdateForm::Literal => rho - 1.0,
    };
    finite_or((z + (target - fitted) * mu) / denom, variable)
}

/// Exact minimizer of L over ε1: `(Z1 + μ(H − QU)) / (ρ1 + μ)`.
pub fn update_eps1(state: &ModelState, problem: &Problem, hyper: &Hyperparams) -> Result<Mat> {
    let h = problem
        .h
        .as_ref()
        .ok_or_else(|| SadlError::DimensionMismatch("problem has no structure target".into()))?;
    let qu = &state.q * &state.u;
    slack_update(&state.z1, h, &qu, hyper.rho1, hyper.mu(), hyper.form, "eps1")
}

/// Exact minimizer of L over ε2: `(Z2 + μ(Y − WQU)) / (ρ2 + μ)`.
pub fn update_eps2(state: &ModelState, problem: &Problem, hyper: &Hyperparams) -> Result<Mat> {
    let y = problem
        .y
        .as_ref()
        .ok_or_else(|| SadlError::DimensionMismatch("problem has no label matrix".into()))?;
    let wqu = &state.w * (&state.q * &state.u);
    slack_update(&state.z2, y, &wqu, hyper.rho2, hyper.mu(), hyper.form, "eps2")
}

/// Dual ascent `Z ← Z + μ(target − fit − ε)`. Absent targets leave their
/// dual untouched.
pub fn update_duals(
    state: &ModelState,
    problem: &Problem,
    mu: f64,
    form: UpdateForm,
) -> (Mat, Mat) {
    let qu = &state.q * &state.u;
    let z1 = match &problem.h {
        Some(h) => {
            let mut r = h - &qu;
            if form == UpdateForm::Consistent {
                r -= &state.eps1;
            }
            &state.z1 + r * mu
        }
        None => state.z1.clone(),
    };
    let z2 = match &problem.y {
        Some(y) => {
            let mut r = y - &state.w * &qu;
            if form == UpdateForm::Consistent {
                r -= &state.eps2;
            }
            &state.z2 + r * mu
        }
        None => state.z2.clone(),
    };
    (z1, z2)
}

/// Smooth part L_s of the augmented Lagrangian (everything but λ1‖U‖₁).
pub fn smooth_lagrangian(state: &ModelState, problem: &Problem, hyper: &Hyperparams) -> f64 {
    let mu = hyper.mu();
    let mut total = 0.5 * (&state.u - &state.omega * &problem.x).norm_squared();
    let r = residuals(state, problem);
    if let Some(r1) = r.structure {
        total += state.z1.dot(&r1) + 0.5 * mu * r1.norm_squared();
        total += 0.5 * hyper.rho1 * state.eps1.norm_squared();
    }
    if let Some(r2) = r.label {
        total += state.z2.dot(&r2) + 0.5 * mu * r2.norm_squared();
        total += 0.5 * hyper.rho2 * state.eps2.norm_squared();
    }
    total += 0.5 * hyper.delta1 * state.q.norm_squared();
    total += 0.5 * hyper.delta2 * state.w.norm_squared();
    total += 0.5 * hyper.lambda2 * state.omega.norm_squared();
    total
}

pub fn lagrangian(state: &ModelState, problem: &Problem, hyper: &Hyperparams) -> f64 {
    smooth_lagrangian(state, problem, hyper) + hyper.lambda1 * state.u.lp_norm(1)
}

/// Analytic gradient of L_s with respect to one variable.
pub fn smooth_grad(
    state: &ModelState,
    problem: &Problem,
    hyper: &Hyperparams,
    which: Variable,
) -> Result<Mat> {
    check_state(state, problem)?;
    let mu = hyper.mu();
    Ok(match which {
        Variable::U => {
            let (u1, u2, u3) = grad_u_parts(state, problem, mu)?;
            u1 + u2 + u3
        }
        Variable::Q => grad_q(state, problem, hyper),
        Variable::W => grad_w(state, problem, hyper),
        Variable::Omega => {
            (&state.omega * &problem.x - &state.u) * problem.x.transpose()
                + &state.omega * hyper.lambda2
        }
        Variable::Eps1 => {
            let (a1, _) = dual_pressure(state, problem, mu);
            match a1 {
                Some(a1) => &state.eps1 * hyper.rho1 - a1,
                None => Mat::zeros(state.eps1.nrows(), state.eps1.ncols()),
            }
        }
        Variable::Eps2 => {
            let (_, a2) = dual_pressure(state, problem, mu);
            match a2 {
                Some(a2) => &state.eps2 * hyper.rho2 - a2,
                None => Mat::zeros(state.eps2.nrows(), state.eps2.ncols()),
            }
        }
    })
}

/// Largest eigenvalue of `AᵀA`, i.e. the squared spectral norm of `A`,
/// computed on whichever Gram matrix is smaller.
pub(crate) fn spectral_norm_sq(a: &Mat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let gram = if a.nrows() <= a.ncols() {
        a * a.transpose()
    } else {
        a.transpose() * a
    };
    largest_eigenvalue(gram)
}

fn largest_eigenvalue(sym: Mat) -> f64 {
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// `‖QU‖₂²` through `r × r` matrices only: with `UUᵀ = VΛVᵀ` and
/// `R = VΛ^½`, the products `QU` and `QR` share singular values.
fn spectral_norm_sq_product(q: &Mat, u: &Mat) -> f64 {
    if q.ncols() >= u.ncols() || q.ncols() >= q.nrows() {
        return spectral_norm_sq(&(q * u));
    }
    let eig = SymmetricEigen::new(u * u.transpose());
    let mut root = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let scale = lambda.max(0.0).sqrt();
        root.column_mut(j).scale_mut(scale);
    }
    spectral_norm_sq(&(q * root))
}

/// Lipschitz constants of the smooth gradient in U, Q and W (spectral
/// norms of the respective Hessian operators).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzConstants {
    pub alpha_u: f64,
    pub alpha_q: f64,
    pub alpha_w: f64,
}

/// `extra_q`, `extra_w` are added ridge curvature (consensus penalties in
/// the distributed solver).
pub(crate) fn lipschitz_constants_with(
    state: &ModelState,
    terms: Terms,
    hyper: &Hyperparams,
    extra_q: f64,
    extra_w: f64,
) -> LipschitzConstants {
    let mu = hyper.mu();
    let (structure, label) = match terms {
        Terms::Both => (true, true),
        Terms::StructureOnly => (true, false),
        Terms::LabelOnly => (false, true),
    };
    let wq = &state.w * &state.q;
    // Hessian in U: I + μ(QᵀQ + QᵀWᵀWQ) = I + μBᵀB with B = [Q; WQ]
    let coupling_u = match (structure, label) {
        (true, true) => {
            let (s, r) = state.q.shape();
            let c = wq.nrows();
            let mut stacked = Mat::zeros(s + c, r);
            stacked.rows_mut(0, s).copy_from(&state.q);
            stacked.rows_mut(s, c).copy_from(&wq);
            spectral_norm_sq(&stacked)
        }
        (true, false) => spectral_norm_sq(&state.q),
        (false, _) => spectral_norm_sq(&wq),
    };
    let uu = spectral_norm_sq(&state.u);
    let ww = if label { spectral_norm_sq(&state.w) } else { 0.0 };
    // Hessian in Q: Q ↦ μ(I·[H term] + WᵀW) Q UUᵀ + δ1 Q
    let coupling_q = uu * (if structure { 1.0 } else { 0.0 } + ww);
    let coupling_w = if label {
        spectral_norm_sq_product(&state.q, &state.u)
    } else {
        0.0
    };
    LipschitzConstants {
        alpha_u: 1.0 + mu * coupling_u,
        alpha_q: hyper.delta1 + extra_q + mu * coupling_q,
        alpha_w: hyper.delta2 + extra_w + mu * coupling_w,
    }
}

pub fn lipschitz_constants(
    state: &ModelState,
    terms: Terms,
    hyper: &Hyperparams,
) -> LipschitzConstants {
    lipschitz_constants_with(state, terms, hyper, 0.0, 0.0)
}

pub(crate) fn steps_from_constants(a: LipschitzConstants, mu: f64, margin: f64) -> StepSizes {
    let scale = (1.0 + margin) / mu;
    // η must stay positive even for a vanishing ridge
    let floor = f64::MIN_POSITIVE;
    StepSizes {
        eta_u: (a.alpha_u * scale).max(floor),
        eta_q: (a.alpha_q * scale).max(floor),
        eta_w: (a.alpha_w * scale).max(floor),
    }
}

/// Step sizes `η = (1 + margin)·α/μ`, so that `μη ≥ α` and every
/// linearized block step decreases L.
pub fn lipschitz_steps(state: &ModelState, terms: Terms, hyper: &Hyperparams) -> StepSizes {
    let margin = match hyper.steps {
        StepMode::Auto { margin } => margin,
        StepMode::Fixed(_) => 0.1,
    };
    steps_from_constants(lipschitz_constants(state, terms, hyper), hyper.mu(), margin)
}

fn frob_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm()
}

pub(crate) fn successive_deltas(prev: &ModelState, next: &ModelState) -> [f64; 8] {
    let p = prev.variables();
    let n = next.variables();
    std::array::from_fn(|i| frob_diff(p[i].1, n[i].1))
}

pub(crate) fn diagnostics(
    state: &ModelState,
    problem: &Problem,
    hyper: &Hyperparams,
) -> (f64, f64, f64, f64, f64) {
    let r = residuals(state, problem);
    (
        lagrangian(state, problem, hyper),
        r.structure.map_or(0.0, |m| m.norm()),
        r.label.map_or(0.0, |m| m.norm()),
        frob_diff(&state.z1, &(&state.eps1 * hyper.rho1)),
        frob_diff(&state.z2, &(&state.eps2 * hyper.rho2)),
    )
}

/// One full pass: U → Q → W → Ω → ε1 → ε2 → duals. Returns the step
/// sizes used.
pub fn iterate(
    state: &mut ModelState,
    problem: &Problem,
    hyper: &Hyperparams,
) -> Result<StepSizes> {
    let terms = problem.terms();
    let mut used = match hyper.steps {
        StepMode::Fixed(s) => s,
        StepMode::Auto { .. } => lipschitz_steps(state, terms, hyper),
    };
    let auto = matches!(hyper.steps, StepMode::Auto { .. });

    state.u = update_u(state, problem, hyper, &used)?;

    if terms != Terms::LabelOnly {
        if auto {
            used.eta_q = lipschitz_steps(state, terms, hyper).eta_q;
        }
        state.q = update_q(state, problem, hyper, &used)?;
    }
    if terms != Terms::StructureOnly {
        if auto {
            used.eta_w = lipschitz_steps(state, terms, hyper).eta_w;
        }
        state.w = update_w(state, problem, hyper, &used)?;
    }

    state.omega = update_omega(&state.u, &problem.x, hyper.lambda2)?;

    if problem.h.is_some() {
        state.eps1 = update_eps1(state, problem, hyper)?;
    }
    if problem.y.is_some() {
        state.eps2 = update_eps2(state, problem, hyper)?;
    }
    let (z1, z2) = update_duals(state, problem, hyper.mu(), hyper.form);
    state.z1 = finite_or(z1, "z1")?;
    state.z2 = finite_or(z2, "z2")?;
    Ok(used)
}

/// Runs at most `max_iter` iterations from `init`, stopping early once the
/// largest successive change across all eight variables drops below `tol`.
pub fn train_sadl(
    problem: &Problem,
    init: ModelState,
    hyper: &Hyperparams,
) -> Result<(ModelState, TrainTrace)> {
    hyper.validate()?;
    check_state(&init, problem)?;
    let mut state = init;
    let mut trace = TrainTrace {
        initial_lagrangian: lagrangian(&state, problem, hyper),
        records: Vec::with_capacity(hyper.max_iter.min(10_000)),
        converged: false,
    };
    for iter in 1..=hyper.max_iter {
        let prev = state.clone();
        let steps = iterate(&mut state, problem, hyper)?;
        let deltas = successive_deltas(&prev, &state);
        let (lagrangian, res_h, res_y, dual_gap1, dual_gap2) =
            diagnostics(&state, problem, hyper);
        let record = IterRecord {
            iter,
            lagrangian,
            res_h,
            res_y,
            dual_gap1,
            dual_gap2,
            deltas,
            steps,
            consensus_gap: 0.0,
        };
        let done = record.max_delta() < hyper.tol;
        trace.records.push(record);
        if done {
            trace.converged = true;
            break;
        }
    }
    Ok((state, trace))
}
