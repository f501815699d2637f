mod common;

use common::*;
use nalgebra::DMatrix;
use sadl::data::{projection_matrix, random_projection};
use sadl::solver::{
    iterate, lagrangian, smooth_grad, smooth_lagrangian, update_eps1, update_eps2, update_omega,
    Variable,
};
use sadl::{DataMatrix, Hyperparams, ModelState};

#[test]
fn lagrangian_matches_term_by_term_sum() {
    let hyper = Hyperparams { lambda1: 0.3, lambda2: 0.2, rho1: 1.5, delta2: 0.7, ..Hyperparams::default() };
    for seed in 0..10 {
        let p = small_problem(seed);
        let st = random_state(&p, seed);
        let fast = lagrangian(&st, &p, &hyper);
        let slow = naive_lagrangian(&st, &p, &hyper);
        assert!((fast - slow).abs() <= 1e-10 * (1.0 + slow.abs()), "{fast} vs {slow}");
        let smooth = smooth_lagrangian(&st, &p, &hyper);
        assert!((smooth - naive_smooth_lagrangian(&st, &p, &hyper)).abs() <= 1e-10 * (1.0 + smooth.abs()));
    }
}

#[test]
fn gradient_of_every_block_matches_finite_differences() {
    let hyper = Hyperparams { mu: Some(3.0), rho2: 2.0, ..Hyperparams::default() };
    let p = small_problem(77);
    let st = random_state(&p, 77);
    for (name, v) in [
        ("U", Variable::U),
        ("Q", Variable::Q),
        ("W", Variable::W),
        ("Omega", Variable::Omega),
        ("Eps1", Variable::Eps1),
        ("Eps2", Variable::Eps2),
    ] {
        let g = smooth_grad(&st, &p, &hyper, v).unwrap();
        let fd = fd_gradient(&st, &p, &hyper, name, 1e-5);
        assert!(rel_err(&g, &fd) < 1e-6, "{name}: {}", rel_err(&g, &fd));
    }
}

#[test]
fn slack_updates_are_block_minimizers() {
    let hyper = Hyperparams::default();
    for seed in 0..5 {
        let p = small_problem(seed);
        let mut st = random_state(&p, seed);
        st.eps1 = update_eps1(&st, &p, &hyper).unwrap();
        st.eps2 = update_eps2(&st, &p, &hyper).unwrap();
        let base = naive_lagrangian(&st, &p, &hyper);
        let mut g = rng(seed + 900);
        for _ in 0..20 {
            for name in ["Eps1", "Eps2"] {
                let mut moved = st.clone();
                let target = variable_mut(&mut moved, name);
                let d = gaussian(target.nrows(), target.ncols(), &mut g) * 1e-3;
                *target += d;
                assert!(naive_lagrangian(&moved, &p, &hyper) >= base - 1e-12);
            }
        }
    }
}

#[test]
fn omega_update_is_a_stationary_point() {
    let hyper = Hyperparams::default();
    let p = small_problem(3);
    let mut st = random_state(&p, 3);
    st.omega = update_omega(&st.u, &p.x, hyper.lambda2).unwrap();
    let g = smooth_grad(&st, &p, &hyper, Variable::Omega).unwrap();
    assert!(g.norm() <= 1e-8 * (1.0 + st.omega.norm()));
    assert!(rel_err(&st.omega, &reference_omega(&st.u, &p.x, hyper.lambda2)) < 1e-10);
}

#[test]
fn dual_steps_track_slack_steps() {
    let hyper = Hyperparams::default();
    let p = small_problem(12);
    let mut st = ModelState::init(p.dims(R), 12);
    iterate(&mut st, &p, &hyper).unwrap();
    for _ in 0..30 {
        let prev = st.clone();
        iterate(&mut st, &p, &hyper).unwrap();
        let dz1 = (&st.z1 - &prev.z1).norm();
        let de1 = (&st.eps1 - &prev.eps1).norm();
        let dz2 = (&st.z2 - &prev.z2).norm();
        let de2 = (&st.eps2 - &prev.eps2).norm();
        assert!((dz1 - hyper.rho1 * de1).abs() <= 1e-10 * (1.0 + dz1));
        assert!((dz2 - hyper.rho2 * de2).abs() <= 1e-10 * (1.0 + dz2));
    }
}

#[test]
fn projection_roughly_preserves_distances() {
    let (m, d, n) = (256, 64, 40);
    let mut g = rng(2024);
    let x = DataMatrix::new(gaussian(m, n, &mut g)).unwrap();
    let px = random_projection(&x, d, 9).unwrap();
    let scale = (m as f64 / d as f64).sqrt();
    let mut distortion = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let orig = (x.as_matrix().column(i) - x.as_matrix().column(j)).norm();
            let proj = (px.as_matrix().column(i) - px.as_matrix().column(j)).norm() * scale;
            distortion.push((proj / orig - 1.0).abs());
        }
    }
    distortion.sort_by(f64::total_cmp);
    let median = distortion[distortion.len() / 2];
    assert!(median < 0.3, "median distortion {median}");

    let p = projection_matrix(m, d, 9);
    for row in p.row_iter() {
        assert!((row.norm() - 1.0).abs() < 1e-12);
    }
    let zero = DataMatrix::new(DMatrix::zeros(m, 3)).unwrap();
    assert_eq!(random_projection(&zero, d, 9).unwrap().as_matrix(), &DMatrix::<f64>::zeros(d, 3));
}

#[test]
fn gauss_solver_agrees_with_library_inverse() {
    let mut g = rng(5);
    let a = gaussian(7, 7, &mut g) + DMatrix::identity(7, 7) * 5.0;
    let b = gaussian(7, 3, &mut g);
    let x = gauss_solve(&a, &b);
    assert!((&a * &x - &b).norm() < 1e-12);
}
