use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};

use super::block::BlockSolver;
use super::*;
use crate::generators::{gen_group_l2, gen_l1_kblock, gen_lasso};
use crate::lagrangian::augmented_lagrangian;
use crate::problem::{build_problem, Block, Problem, SmoothTerm};
use crate::prox::ProxTerm;

fn two_identity_blocks(q: &[f64]) -> Problem {
    let n = q.len();
    build_problem(
        vec![
            Block::new(DMatrix::identity(n, n)),
            Block::new(DMatrix::identity(n, n)),
        ],
        DVector::from_column_slice(q),
    )
    .unwrap()
}

fn fixed(variant: Variant, alpha: f64) -> SolverConfig {
    SolverConfig::default().with_variant(variant).with_alpha(alpha)
}

#[test]
fn block_minimizer_closed_form() {
    // h = 0, no smooth term, E_1 = I: ρ(x − c) − y = 0 with c = q − x_2.
    let p = two_identity_blocks(&[1.0, -2.0]);
    let x = DVector::from_vec(vec![0.0, 0.0, 0.5, 0.25]);
    let y = DVector::from_vec(vec![0.3, -0.6]);
    let rho = 2.0;
    let x1 = solve_block(&p, 0, &x, &y, rho, 1e-12).unwrap();
    let expected = DVector::from_vec(vec![1.0 - 0.5 + 0.3 / rho, -2.0 - 0.25 - 0.6 / rho]);
    assert_relative_eq!(x1, expected, epsilon = 1e-10);
}

#[test]
fn block_solution_is_prox_fixed_point_and_warm_start_exits() {
    let p = gen_group_l2(8, 3, 3, -1.0, 1.0, 3).unwrap();
    let solver = BlockSolver::new(&p, 1.0);
    let y = DVector::from_fn(8, |i, _| (i as f64 * 0.7).sin());
    let x = DVector::from_element(9, 0.2);
    let k = 2;
    let info = p.info(k);
    let ek = &p.block(k).e;
    let xk = x.rows(info.offset, info.dim).into_owned();
    let rest = p.e() * &x - ek * &xk - p.q();
    let first = solver.solve(k, &rest, &y, &xk, 1e-12).unwrap();
    assert!(first.prox_grad_norm <= 1e-12);
    let again = solver.solve(k, &rest, &y, &first.x, 1e-12).unwrap();
    assert_eq!(again.iterations, 0);
    assert_eq!(again.x, first.x);
}

#[test]
fn zero_step_leaves_multiplier() {
    let p = gen_l1_kblock(5, 4, -1.0, 1.0, 0).unwrap();
    let mut state = IterateState::initial(&p);
    state.y = DVector::from_element(5, 0.4);
    for variant in [Variant::GaussSeidel, Variant::Proximal, Variant::Jacobi] {
        let engine = Engine::new(&p, &fixed(variant, 0.0)).unwrap();
        let (next, _) = engine.step(&state, 0.0).unwrap();
        assert_eq!(next.y, state.y);
        assert_eq!(next.r, 1);
    }
}

#[test]
fn proximal_without_h_or_a_is_a_gradient_step() {
    let p = two_identity_blocks(&[1.0, 2.0]);
    let cfg = fixed(Variant::Proximal, 0.0);
    let engine = Engine::new(&p, &cfg).unwrap();
    let beta = engine.beta();
    let x = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
    let y = DVector::from_vec(vec![0.5, -0.5]);
    let next = engine.primal_update(&x, &y).unwrap().x;
    // Block 1 then block 2, each against the freshest residual.
    let mut expected = x.clone();
    for k in 0..2 {
        let ex = DVector::from_vec(vec![expected[0] + expected[2], expected[1] + expected[3]]);
        let grad = (ex - p.q()) * cfg.rho - &y;
        for i in 0..2 {
            expected[2 * k + i] -= grad[i] / beta;
        }
    }
    assert_relative_eq!(next, expected, epsilon = 1e-14);
}

#[test]
fn jacobi_update_identity_is_exact() {
    let p = gen_l1_kblock(10, 7, -1.0, 1.0, 1).unwrap();
    let engine = Engine::new(&p, &fixed(Variant::Jacobi, 0.1)).unwrap();
    let mut state = IterateState::initial(&p);
    let k = p.num_blocks() as f64;
    for _ in 0..20 {
        let (next, upd) = engine.step(&state, 0.1).unwrap();
        let w = upd.w.unwrap();
        let lhs = (&next.x - &state.x) * k;
        let rhs = &w - &state.x;
        assert!((lhs - rhs).amax() <= 1e-14 * (1.0 + w.amax()));
        state = next;
    }
}

#[test]
fn single_block_variants_coincide() {
    let p = build_problem(
        vec![Block::new(DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1]))
            .with_nonsmooth(ProxTerm::l1(0.2))],
        DVector::from_vec(vec![1.0, -1.0, 0.5]),
    )
    .unwrap();
    let mut states: Vec<IterateState> = Vec::new();
    for variant in [Variant::GaussSeidel, Variant::Jacobi, Variant::JacobiUnsafe] {
        let engine = Engine::new(&p, &fixed(variant, 0.5)).unwrap();
        let mut s = IterateState::initial(&p);
        for _ in 0..15 {
            s = engine.step(&s, 0.5).unwrap().0;
        }
        states.push(s);
    }
    assert_eq!(states[0], states[1]);
    assert_eq!(states[0], states[2]);
}

#[test]
fn gauss_seidel_descent_with_strong_convexity_constant() {
    let p = gen_l1_kblock(12, 15, -1.0, 1.0, 2).unwrap();
    let rho = 1.0;
    let gamma = 0.5 * rho * p.min_ete_lambda();
    let engine = Engine::new(&p, &fixed(Variant::GaussSeidel, 0.05)).unwrap();
    let mut s = IterateState::initial(&p);
    for _ in 0..100 {
        let (next, _) = engine.step(&s, 0.05).unwrap();
        let before = augmented_lagrangian(&p, &s.x, &s.y, rho).unwrap();
        let after = augmented_lagrangian(&p, &next.x, &s.y, rho).unwrap();
        let step2 = (&next.x - &s.x).norm_squared();
        assert!(before - after >= gamma * step2 - 1e-8 * (1.0 + before.abs()));
        s = next;
    }
}

#[test]
fn proximal_descent_with_beta_margin() {
    let p = gen_lasso(12, 20, 0.5, 0.1, 0).unwrap();
    let cfg = fixed(Variant::Proximal, 0.05);
    let engine = Engine::new(&p, &cfg).unwrap();
    let gamma = 0.5 * (engine.beta() - nu_constant(&p, cfg.rho));
    assert!(gamma > 0.0);
    let mut s = IterateState::initial(&p);
    for _ in 0..100 {
        let (next, _) = engine.step(&s, 0.05).unwrap();
        let before = augmented_lagrangian(&p, &s.x, &s.y, cfg.rho).unwrap();
        let after = augmented_lagrangian(&p, &next.x, &s.y, cfg.rho).unwrap();
        assert!(before - after >= gamma * (&next.x - &s.x).norm_squared() - 1e-8 * (1.0 + before.abs()));
        s = next;
    }
}

#[test]
fn nu_examples() {
    let p = two_identity_blocks(&[1.0]);
    assert_relative_eq!(nu_constant(&p, 2.0), 2.0, epsilon = 1e-12);
    assert_relative_eq!(nu_constant(&p, 4.0), 2.0 * nu_constant(&p, 2.0), epsilon = 1e-12);
    assert_eq!(nu_constant(&p, 0.0), 0.0);
    assert!(default_beta(&p, 0.0).is_err());
    assert_relative_eq!(default_beta(&p, 1.0).unwrap(), 1.01, epsilon = 1e-12);
}

#[test]
fn optimal_start_converges_at_zero() {
    // min |x| s.t. x = 0.
    let p = build_problem(
        vec![Block::new(DMatrix::from_element(1, 1, 1.0)).with_nonsmooth(ProxTerm::l1(1.0))],
        DVector::zeros(1),
    )
    .unwrap();
    let res = run(&p, &SolverConfig::default(), None).unwrap();
    assert!(res.converged);
    assert_eq!(res.iterations(), 0);
    assert_eq!(res.termination, Termination::Converged);
}

#[test]
fn runs_are_deterministic() {
    let p = gen_l1_kblock(10, 12, -1.0, 1.0, 4).unwrap();
    let cfg = SolverConfig {
        max_iters: 200,
        ..SolverConfig::default()
    };
    let a = run(&p, &cfg, None).unwrap();
    let b = run(&p, &cfg, None).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.alphas, b.alphas);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn undamped_jacobi_increase_is_reported() {
    // Four copies of the same column with g_k = ½x_k²: the simultaneous
    // update multiplies deviations by −(K − 1)ρ/(1 + ρ) = −1.5.
    let blocks = (0..4)
        .map(|_| Block::new(DMatrix::from_element(1, 1, 1.0)).with_smooth(SmoothTerm::quadratic(DVector::zeros(1))))
        .collect();
    let p = build_problem(blocks, DVector::from_element(1, 1.0)).unwrap();
    let cfg = SolverConfig {
        max_iters: 30,
        ..fixed(Variant::JacobiUnsafe, 0.1)
    };
    let res = run(&p, &cfg, None).unwrap();
    assert!(res.primal_increases > 0);
    assert_eq!(res.termination, Termination::NonMonotoneWarning);
    let damped = SolverConfig {
        max_iters: 30,
        ..fixed(Variant::Jacobi, 0.1)
    };
    assert_eq!(run(&p, &damped, None).unwrap().primal_increases, 0);
}

#[test]
fn lasso_defaults_converge_to_reference() {
    let p = gen_lasso(15, 20, 0.5, 0.1, 1).unwrap();
    let cfg = SolverConfig {
        allow_rank_deficient: true,
        ..SolverConfig::default()
    };
    let res = run(&p, &cfg, None).unwrap();
    assert!(res.converged);
    let reference = crate::diagnostics::reference_solution(&p, cfg.rho, 1e-10).unwrap();
    assert!((p.objective(&res.state.x).unwrap() - reference.d_star).abs() <= 1e-5);
}
