//! Consensus-distributed training.
//!
//! The samples are split into `N` shards. Each outer round every worker runs
//! one local epoch against the current global `(Ω, Q, W)`, pulled toward
//! them by the penalties `ξ1/2‖Ω − Ω_t‖² + ξ2/2‖Q − Q_t‖² + ξ3/2‖W − W_t‖²`.
//! The coordinator then averages the local copies, renormalizes the rows of
//! the global dictionary and grows μ and the ξ's geometrically up to their
//! caps.
//!
//! Workers within one round only read the globals from the previous round,
//! so they run on separate threads and are joined at a barrier. Results are
//! always combined in worker-index order, which keeps the output independent
//! of the thread count.

use rand::seq::SliceRandom;

use crate::error::{Result, SadlError};
use crate::model::{
    seeded_rng, DistHyperparams, Hyperparams, IterRecord, Mat, ModelState, Problem, StepMode,
    TrainTrace,
};
use crate::solver::{
    self, lipschitz_constants_with, solve_ridge_system, steps_from_constants, successive_deltas,
};

/// Consensus variables.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub omega: Mat,
    pub q: Mat,
    pub w: Mat,
}

/// Consensus penalty weights for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusPenalties {
    pub xi1: f64,
    pub xi2: f64,
    pub xi3: f64,
}

/// A column shard of the training problem.
#[derive(Debug, Clone)]
pub struct Shard {
    /// Columns of the full problem, ascending.
    pub columns: Vec<usize>,
    pub problem: Problem,
}

#[derive(Debug, Clone)]
pub struct WorkerState {
    pub shard: Shard,
    pub state: ModelState,
    /// Local penalties; `mu` is overwritten every round by the schedule.
    pub hyper: Hyperparams,
}

/// Seeded balanced partition of `0..n` into `clusters` sorted index sets.
/// The first `n % clusters` shards hold one extra column.
pub fn partition_indices(n: usize, clusters: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if clusters == 0 || clusters > n {
        return Err(SadlError::TooManyClusters { clusters, samples: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let base = n / clusters;
    let extra = n % clusters;
    let mut shards = Vec::with_capacity(clusters);
    let mut start = 0;
    for t in 0..clusters {
        let len = base + usize::from(t < extra);
        let mut cols = order[start..start + len].to_vec();
        cols.sort_unstable();
        shards.push(cols);
        start += len;
    }
    Ok(shards)
}

/// Splits `X`, `H` and `Y` into aligned column shards. Every shard keeps the
/// global row structure of `H` and `Y`.
pub fn partition(problem: &Problem, clusters: usize, seed: u64) -> Result<Vec<Shard>> {
    Ok(partition_indices(problem.x.ncols(), clusters, seed)?
        .into_iter()
        .map(|columns| Shard {
            problem: problem.select_columns(&columns),
            columns,
        })
        .collect())
}

/// Scales every row to unit l2 norm.
pub fn normalize_rows(m: &Mat) -> Result<Mat> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(SadlError::ZeroRow { row: i });
        }
        row /= norm;
    }
    Ok(out)
}

/// `min(growth·value, cap)`.
pub fn anneal(value: f64, growth: f64, cap: f64) -> f64 {
    (growth * value).min(cap)
}

/// Local dictionary in closed form:
/// `Ω_t = (U_t X_tᵀ + ξ1 Ω)(X_t X_tᵀ + (ξ1 + λ2) I)⁻¹`.
pub fn local_omega(u: &Mat, x: &Mat, global_omega: &Mat, xi1: f64, lambda2: f64) -> Result<Mat> {
    let m = x.nrows();
    let ridge = xi1 + lambda2;
    if ridge == 0.0 && m > x.ncols() {
        return Err(SadlError::SingularSystem(format!(
            "local Gram matrix is {m}x{m} with rank at most {} and no ridge",
            x.ncols()
        )));
    }
    let g = x * x.transpose() + Mat::identity(m, m) * ridge;
    let rhs = u * x.transpose() + global_omega * xi1;
    solve_ridge_system(g, &rhs, "local omega update")
}

/// Local augmented Lagrangian of one worker, consensus penalties included.
pub fn local_lagrangian(
    worker: &WorkerState,
    globals: &GlobalState,
    mu: f64,
    xi: ConsensusPenalties,
) -> f64 {
    let hyper = Hyperparams { mu: Some(mu), ..worker.hyper };
    let st = &worker.state;
    solver::lagrangian(st, &worker.shard.problem, &hyper)
        + 0.5 * xi.xi1 * (&globals.omega - &st.omega).norm_squared()
        + 0.5 * xi.xi2 * (&globals.q - &st.q).norm_squared()
        + 0.5 * xi.xi3 * (&globals.w - &st.w).norm_squared()
}

/// One local pass: U, then Q and W with consensus pulls, closed-form Ω_t
/// followed by row normalization, then the slacks and duals.
pub fn local_epoch(
    worker: &WorkerState,
    globals: &GlobalState,
    mu: f64,
    xi: ConsensusPenalties,
) -> Result<(WorkerState, IterRecord)> {
    let problem = &worker.shard.problem;
    let hyper = Hyperparams { mu: Some(mu), ..worker.hyper };
    let terms = problem.terms();
    let prev = worker.state.clone();
    let mut st = worker.state.clone();

    let auto_steps = |st: &ModelState| match hyper.steps {
        StepMode::Fixed(s) => s,
        StepMode::Auto { margin } => steps_from_constants(
            lipschitz_constants_with(st, terms, &hyper, xi.xi2, xi.xi3),
            mu,
            margin,
        ),
    };

    let mut used = auto_steps(&st);
    st.u = solver::update_u(&st, problem, &hyper, &used)?;

    used.eta_q = auto_steps(&st).eta_q;
    let mut step = solver::smooth_grad(&st, problem, &hyper, solver::Variable::Q)?;
    step += (&st.q - &globals.q) * xi.xi2;
    st.q = finite(&st.q - step / (mu * used.eta_q), "q")?;

    used.eta_w = auto_steps(&st).eta_w;
    let mut step = solver::smooth_grad(&st, problem, &hyper, solver::Variable::W)?;
    step += (&st.w - &globals.w) * xi.xi3;
    st.w = finite(&st.w - step / (mu * used.eta_w), "w")?;

    let omega = local_omega(&st.u, &problem.x, &globals.omega, xi.xi1, hyper.lambda2)?;
    st.omega = normalize_rows(&omega)?;

    if problem.h.is_some() {
        st.eps1 = solver::update_eps1(&st, problem, &hyper)?;
    }
    if problem.y.is_some() {
        st.eps2 = solver::update_eps2(&st, problem, &hyper)?;
    }
    let (z1, z2) = solver::update_duals(&st, problem, mu, hyper.form);
    st.z1 = finite(z1, "z1")?;
    st.z2 = finite(z2, "z2")?;

    let next = WorkerState {
        shard: worker.shard.clone(),
        state: st,
        hyper: worker.hyper,
    };
    let r = solver::residuals(&next.state, problem);
    let record = IterRecord {
        iter: 0,
        lagrangian: local_lagrangian(&next, globals, mu, xi),
        res_h: r.structure.map_or(0.0, |m| m.norm()),
        res_y: r.label.map_or(0.0, |m| m.norm()),
        dual_gap1: (&next.state.z1 - &next.state.eps1 * hyper.rho1).norm(),
        dual_gap2: (&next.state.z2 - &next.state.eps2 * hyper.rho2).norm(),
        deltas: successive_deltas(&prev, &next.state),
        steps: used,
        consensus_gap: 0.0,
    };
    Ok((next, record))
}

fn finite(m: Mat, variable: &'static str) -> Result<Mat> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(m)
    } else {
        Err(SadlError::NonFiniteUpdate { variable })
    }
}

/// Averages the local copies in worker order; the global dictionary rows
/// are renormalized, Q and W are plain means.
pub fn consensus_average(workers: &[WorkerState]) -> Result<GlobalState> {
    let first = workers
        .first()
        .ok_or_else(|| SadlError::InvalidHyper("consensus needs at least one worker".into()))?;
    let n = workers.len() as f64;
    let mut omega = first.state.omega.clone();
    let mut q = first.state.q.clone();
    let mut w = first.state.w.clone();
    for wk in &workers[1..] {
        omega += &wk.state.omega;
        q += &wk.state.q;
        w += &wk.state.w;
    }
    Ok(GlobalState {
        omega: normalize_rows(&(omega / n))?,
        q: q / n,
        w: w / n,
    })
}

/// Largest distance between a local dictionary and the global one.
pub fn consensus_gap(workers: &[WorkerState], globals: &GlobalState) -> f64 {
    workers
        .iter()
        .map(|w| (&w.state.omega - &globals.omega).norm())
        .fold(0.0, f64::max)
}

/// Per-round coordinator diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub iter: usize,
    pub mu: f64,
    pub xi: [f64; 3],
    /// max(‖ΔΩ‖, ‖ΔQ‖, ‖ΔW‖) of the global variables.
    pub global_delta: f64,
    pub consensus_gap: f64,
}

#[derive(Debug, Clone)]
pub struct DsadlOutput {
    pub globals: GlobalState,
    pub workers: Vec<WorkerState>,
    /// One trace per worker; `consensus_gap` is filled from the round.
    pub worker_traces: Vec<TrainTrace>,
    pub rounds: Vec<RoundRecord>,
    pub converged: bool,
}

/// Initial globals from the seeded scheme of [`ModelState::init`], with
/// unit-norm dictionary rows.
pub fn initial_globals(problem: &Problem, atoms: usize, seed: u64) -> Result<GlobalState> {
    let init = ModelState::init(problem.dims(atoms), seed);
    Ok(GlobalState {
        omega: normalize_rows(&init.omega)?,
        q: init.q,
        w: init.w,
    })
}

/// Workers start from copies of the globals with zero codes, slacks and
/// duals.
pub fn init_workers(
    shards: Vec<Shard>,
    globals: &GlobalState,
    hyper: &Hyperparams,
) -> Vec<WorkerState> {
    shards
        .into_iter()
        .map(|shard| {
            let mut state = ModelState::zeros(shard.problem.dims(globals.omega.nrows()));
            state.omega = globals.omega.clone();
            state.q = globals.q.clone();
            state.w = globals.w.clone();
            WorkerState { shard, state, hyper: *hyper }
        })
        .collect()
}

/// Runs one local epoch on every worker, on up to `threads` threads.
pub fn run_round(
    workers: &[WorkerState],
    globals: &GlobalState,
    mu: f64,
    xi: ConsensusPenalties,
    threads: usize,
) -> Result<Vec<(WorkerState, IterRecord)>> {
    let n = workers.len();
    let threads = if threads == 0 { n } else { threads.min(n) }.max(1);
    let mut results: Vec<Option<Result<(WorkerState, IterRecord)>>> = (0..n).map(|_| None).collect();
    if threads == 1 {
        for (t, wk) in workers.iter().enumerate() {
            results[t] = Some(local_epoch(wk, globals, mu, xi));
        }
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|lane| {
                    scope.spawn(move || {
                        (lane..n)
                            .step_by(threads)
                            .map(|t| (t, local_epoch(&workers[t], globals, mu, xi)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (t, r) in h.join().expect("worker thread panicked") {
                    results[t] = Some(r);
                }
            }
        });
    }
    results
        .into_iter()
        .enumerate()
        .map(|(t, r)| {
            r.expect("every worker ran")
                .map_err(|e| SadlError::Worker { index: t, source: Box::new(e) })
        })
        .collect()
}

/// Distributed training. `atoms` is the dictionary size r.
pub fn train_dsadl(problem: &Problem, atoms: usize, dist: &DistHyperparams) -> Result<DsadlOutput> {
    dist.validate()?;
    let shards = partition(problem, dist.n_clusters, dist.seed)?;
    let mut globals = initial_globals(problem, atoms, dist.seed)?;
    let mut workers = init_workers(shards, &globals, &dist.base);

    let mut mu = dist.base.mu();
    let mut xi = ConsensusPenalties { xi1: dist.xi1, xi2: dist.xi2, xi3: dist.xi3 };
    let mut worker_traces: Vec<TrainTrace> = workers
        .iter()
        .map(|w| TrainTrace {
            initial_lagrangian: local_lagrangian(w, &globals, mu, xi),
            records: Vec::new(),
            converged: false,
        })
        .collect();
    let mut rounds = Vec::new();
    let mut converged = false;

    for iter in 1..=dist.base.max_iter {
        let results = run_round(&workers, &globals, mu, xi, dist.threads)?;
        let mut records = Vec::with_capacity(results.len());
        workers = results
            .into_iter()
            .map(|(w, rec)| {
                records.push(rec);
                w
            })
            .collect();

        let next = consensus_average(&workers)?;
        let global_delta = (&next.omega - &globals.omega)
            .norm()
            .max((&next.q - &globals.q).norm())
            .max((&next.w - &globals.w).norm());
        globals = next;
        let gap = consensus_gap(&workers, &globals);

        for (trace, mut rec) in worker_traces.iter_mut().zip(records) {
            rec.iter = iter;
            rec.consensus_gap = gap;
            trace.records.push(rec);
        }
        rounds.push(RoundRecord {
            iter,
            mu,
            xi: [xi.xi1, xi.xi2, xi.xi3],
            global_delta,
            consensus_gap: gap,
        });

        // schedule advances once per outer round
        mu = anneal(mu, dist.growth_rho, dist.mu_max);
        xi = ConsensusPenalties {
            xi1: anneal(xi.xi1, dist.growth_rho, dist.xi1_max),
            xi2: anneal(xi.xi2, dist.growth_rho, dist.xi2_max),
            xi3: anneal(xi.xi3, dist.growth_rho, dist.xi3_max),
        };

        if global_delta < dist.base.tol {
            converged = true;
            break;
        }
    }
    for t in &mut worker_traces {
        t.converged = converged;
    }
    Ok(DsadlOutput { globals, workers, worker_traces, rounds, converged })
}
