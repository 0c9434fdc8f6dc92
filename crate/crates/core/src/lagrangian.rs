//! Augmented Lagrangian `L(x;y) = f(x) + ⟨y, q − Ex⟩ + ρ/2‖q − Ex‖²`, its
//! smooth gradient, the proximal gradient residual and the dual function
//! `d(y) = min_x L(x;y)` realized by cyclic exact block minimization.

use nalgebra::DVector;

use crate::error::{AdmmError, Result};
use crate::problem::Problem;
use crate::solvers::block::BlockSolver;

/// Default accuracy of the inner minimizer behind `d(y)`.
pub const DEFAULT_INNER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierState {
    pub y: DVector<f64>,
}

/// Output of [`minimize_lagrangian`]: a point of `X(y)` and the dual data it certifies.
#[derive(Debug, Clone)]
pub struct InnerSolveResult {
    pub x_of_y: DVector<f64>,
    pub d_value: f64,
    /// `∇d(y) = q − E x(y)`.
    pub dual_grad: DVector<f64>,
    pub prox_grad_norm_at_exit: f64,
    /// Number of full block sweeps.
    pub iterations: usize,
}

fn check_rho(rho: f64, strict: bool) -> Result<()> {
    let ok = rho.is_finite() && if strict { rho > 0.0 } else { rho >= 0.0 };
    if ok {
        Ok(())
    } else {
        Err(AdmmError::InvalidParameter(format!("penalty rho = {rho} out of range")))
    }
}

/// `L(x;y)`; `f64::INFINITY` when an indicator is violated.
pub fn augmented_lagrangian(problem: &Problem, x: &DVector<f64>, y: &DVector<f64>, rho: f64) -> Result<f64> {
    problem.check_conformal(x)?;
    problem.check_multiplier(y)?;
    check_rho(rho, false)?;
    Ok(lagrangian_unchecked(problem, x, y, rho))
}

pub(crate) fn lagrangian_unchecked(problem: &Problem, x: &DVector<f64>, y: &DVector<f64>, rho: f64) -> f64 {
    let f = problem.objective_unchecked(x);
    if f == f64::INFINITY {
        return f;
    }
    let res = problem.residual(x);
    f - y.dot(&res) + 0.5 * rho * res.norm_squared()
}

/// `∇_x(L − h)`: per block `A_kᵀ∇g_k(A_k x_k) − E_kᵀy + ρE_kᵀ(Ex − q)`.
pub fn smooth_gradient(problem: &Problem, x: &DVector<f64>, y: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
    problem.check_conformal(x)?;
    problem.check_multiplier(y)?;
    check_rho(rho, false)?;
    Ok(smooth_gradient_unchecked(problem, x, y, rho))
}

pub(crate) fn smooth_gradient_unchecked(problem: &Problem, x: &DVector<f64>, y: &DVector<f64>, rho: f64) -> DVector<f64> {
    let mut w = problem.residual(x) * rho;
    w -= y;
    let mut grad = problem.e().tr_mul(&w);
    for k in 0..problem.num_blocks() {
        if problem.block(k).smooth.is_some() {
            let xk = problem.x_block(x, k).into_owned();
            let gk = problem.smooth_gradient_block(k, &xk);
            let mut slot = grad.rows_mut(problem.info(k).offset, problem.info(k).dim);
            slot += gk;
        }
    }
    grad
}

/// `x − prox_h(x − ∇_x(L − h))`, prox applied blockwise with unit step.
pub fn proximal_gradient(problem: &Problem, x: &DVector<f64>, y: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
    problem.check_conformal(x)?;
    problem.check_multiplier(y)?;
    check_rho(rho, false)?;
    Ok(proximal_gradient_unchecked(problem, x, y, rho))
}

pub(crate) fn proximal_gradient_unchecked(problem: &Problem, x: &DVector<f64>, y: &DVector<f64>, rho: f64) -> DVector<f64> {
    let grad = smooth_gradient_unchecked(problem, x, y, rho);
    let mut out = DVector::zeros(x.len());
    for info in problem.infos() {
        let xk = x.rows(info.offset, info.dim).into_owned();
        let arg = &xk - grad.rows(info.offset, info.dim);
        let p = info.h.prox_unchecked(&arg, 1.0);
        out.rows_mut(info.offset, info.dim).copy_from(&(xk - p));
    }
    out
}

/// Minimizes `L(·;y)` by cyclic exact block minimization until the proximal
/// gradient norm is at most `tol`.
///
/// The cap is `100·K·n` sweeps; hitting it returns
/// [`AdmmError::IterationCap`] carrying the best iterate.
pub fn minimize_lagrangian(
    problem: &Problem,
    y: &DVector<f64>,
    rho: f64,
    tol: f64,
    warm_start: Option<&DVector<f64>>,
) -> Result<InnerSolveResult> {
    check_rho(rho, true)?;
    let solver = BlockSolver::new(problem, rho);
    minimize_lagrangian_with(&solver, y, tol, warm_start)
}

/// Sweeps between active-set steps in the inner minimization.
const FACE_STEP_EVERY: usize = 8;

pub(crate) fn minimize_lagrangian_with(
    solver: &BlockSolver<'_>,
    y: &DVector<f64>,
    tol: f64,
    warm_start: Option<&DVector<f64>>,
) -> Result<InnerSolveResult> {
    let problem = solver.problem();
    let rho = solver.rho();
    problem.check_multiplier(y)?;
    if !(tol > 0.0) {
        return Err(AdmmError::InvalidParameter(format!("tolerance {tol} must be positive")));
    }
    let mut x = match warm_start {
        Some(w) => {
            problem.check_conformal(w)?;
            let mut x = w.clone();
            for info in problem.infos() {
                let xk = info.h.project_box(&x.rows(info.offset, info.dim).into_owned());
                x.rows_mut(info.offset, info.dim).copy_from(&xk);
            }
            x
        }
        None => problem.initial_point(),
    };
    let k_blocks = problem.num_blocks();
    let cap = (100 * k_blocks * problem.n()).max(100);
    let block_tol = 0.1 * tol / (k_blocks as f64).sqrt();
    let mut ex = problem.e() * &x;
    let mut pg = proximal_gradient_unchecked(problem, &x, y, rho).norm();
    let mut best = (pg, x.clone());
    let mut sweeps = 0;
    while pg > tol {
        if sweeps >= cap {
            return Err(AdmmError::IterationCap {
                iterations: sweeps,
                residual: best.0,
                best: best.1,
            });
        }
        for k in 0..k_blocks {
            let info = problem.info(k);
            let ek = &problem.block(k).e;
            let xk_old = x.rows(info.offset, info.dim).into_owned();
            let rest = &ex - ek * &xk_old - problem.q();
            let solved = solver.solve(k, &rest, y, &xk_old, block_tol)?;
            ex = rest + ek * &solved.x + problem.q();
            x.rows_mut(info.offset, info.dim).copy_from(&solved.x);
        }
        sweeps += 1;
        // Recompute Ex from scratch periodically to stop drift in the running sum.
        if sweeps % 16 == 0 {
            ex = problem.e() * &x;
        }
        if sweeps % FACE_STEP_EVERY == 1 {
            if let Some(u) = solver.face_step(&x, y) {
                if lagrangian_unchecked(problem, &u, y, rho) <= lagrangian_unchecked(problem, &x, y, rho) {
                    ex = problem.e() * &u;
                    x = u;
                }
            }
        }
        pg = proximal_gradient_unchecked(problem, &x, y, rho).norm();
        if pg < best.0 {
            best = (pg, x.clone());
        }
    }
    let res = problem.residual(&x);
    let d_value = lagrangian_unchecked(problem, &x, y, rho);
    Ok(InnerSolveResult {
        x_of_y: x,
        d_value,
        dual_grad: -res,
        prox_grad_norm_at_exit: pg,
        iterations: sweeps,
    })
}

/// `d(y)` to inner accuracy `tol`.
pub fn dual_value(problem: &Problem, y: &DVector<f64>, rho: f64, tol: f64) -> Result<f64> {
    Ok(minimize_lagrangian(problem, y, rho, tol, None)?.d_value)
}

/// `∇d(y) = q − E x(y)` to inner accuracy `tol`.
pub fn dual_gradient(problem: &Problem, y: &DVector<f64>, rho: f64, tol: f64) -> Result<DVector<f64>> {
    Ok(minimize_lagrangian(problem, y, rho, tol, None)?.dual_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build_problem, Block, SmoothTerm};
    use crate::prox::ProxTerm;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn free_identity(m: usize) -> Problem {
        build_problem(vec![Block::new(DMatrix::identity(m, m))], DVector::zeros(m)).unwrap()
    }

    #[test]
    fn lagrangian_direct_substitution() {
        let p = free_identity(2);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let y = DVector::from_vec(vec![2.0, 0.0]);
        assert_relative_eq!(augmented_lagrangian(&p, &x, &y, 2.0).unwrap(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn lagrangian_feasible_point_is_objective() {
        let p = build_problem(
            vec![Block::new(DMatrix::identity(2, 2)).with_nonsmooth(ProxTerm::l1(1.0))],
            DVector::from_vec(vec![1.0, -2.0]),
        )
        .unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let y = DVector::from_vec(vec![5.0, 7.0]);
        assert_eq!(augmented_lagrangian(&p, &x, &y, 3.0).unwrap(), 3.0);
    }

    #[test]
    fn lagrangian_linear_in_rho() {
        let p = free_identity(2);
        let x = DVector::from_vec(vec![0.5, -1.5]);
        let y = DVector::from_vec(vec![0.1, 0.2]);
        let l1 = augmented_lagrangian(&p, &x, &y, 1.0).unwrap();
        let l2 = augmented_lagrangian(&p, &x, &y, 3.0).unwrap();
        assert_relative_eq!(l2 - l1, 0.5 * 2.0 * x.norm_squared(), epsilon = 1e-14);
    }

    #[test]
    fn smooth_gradient_cases() {
        let p = free_identity(2);
        let x = DVector::zeros(2);
        let y = DVector::from_vec(vec![1.0, -2.0]);
        assert_eq!(smooth_gradient(&p, &x, &y, 1.0).unwrap(), -&y);

        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, -1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 0.0, 2.0]);
        let q = build_problem(
            vec![Block::new(DMatrix::identity(2, 2)).with_composed_smooth(a.clone(), SmoothTerm::quadratic(b.clone()))],
            DVector::zeros(2),
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let g = smooth_gradient(&q, &x, &DVector::zeros(2), 0.0).unwrap();
        let expected = a.transpose() * (&a * &x - &b);
        assert_relative_eq!((g - expected).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn prox_gradient_equals_gradient_when_h_zero() {
        let p = free_identity(3);
        let x = DVector::from_vec(vec![0.3, 1.0, -2.0]);
        let y = DVector::from_vec(vec![1.0, 0.0, 0.5]);
        let pg = proximal_gradient(&p, &x, &y, 1.5).unwrap();
        let g = smooth_gradient(&p, &x, &y, 1.5).unwrap();
        assert_eq!(pg, g);
    }

    #[test]
    fn closed_form_dual() {
        let p = free_identity(3);
        let rho = 2.0;
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let res = minimize_lagrangian(&p, &y, rho, 1e-12, None).unwrap();
        assert_relative_eq!((&res.x_of_y - &y / rho).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(res.d_value, -y.norm_squared() / (2.0 * rho), epsilon = 1e-12);
        assert_relative_eq!((&res.dual_grad + &y / rho).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rho_zero_rejected() {
        let p = free_identity(1);
        assert!(minimize_lagrangian(&p, &DVector::zeros(1), 0.0, 1e-10, None).is_err());
    }

    #[test]
    fn warm_start_at_solution_needs_no_sweeps() {
        let p = free_identity(2);
        let y = DVector::from_vec(vec![1.0, 1.0]);
        let sol = minimize_lagrangian(&p, &y, 1.0, 1e-12, None).unwrap();
        let again = minimize_lagrangian(&p, &y, 1.0, 1e-12, Some(&sol.x_of_y)).unwrap();
        assert_eq!(again.iterations, 0);
    }

    #[test]
    fn face_step_solves_unconstrained_quadratic() {
        // Two nearly parallel columns: coordinate sweeps crawl, one face step lands.
        let p = build_problem(
            vec![
                Block::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])),
                Block::new(DMatrix::from_column_slice(2, 1, &[0.99, 0.1])),
            ],
            DVector::from_vec(vec![1.0, 0.5]),
        )
        .unwrap();
        let y = DVector::from_vec(vec![0.2, -0.1]);
        let solver = BlockSolver::new(&p, 1.0);
        let x = solver.face_step(&DVector::zeros(2), &y).unwrap();
        assert!(proximal_gradient_unchecked(&p, &x, &y, 1.0).norm() <= 1e-12);
    }

    #[test]
    fn face_step_never_increases_lagrangian() {
        let p = crate::generators::gen_l1_kblock(8, 12, -1.0, 1.0, 3).unwrap();
        let solver = BlockSolver::new(&p, 1.0);
        for i in 0..20 {
            let x = DVector::from_fn(12, |j, _| ((i * 12 + j) as f64 * 0.37).sin().clamp(-1.0, 1.0));
            let y = DVector::from_fn(8, |j, _| ((i + j) as f64 * 0.91).cos());
            if let Some(u) = solver.face_step(&x, &y) {
                assert!(lagrangian_unchecked(&p, &u, &y, 1.0) <= lagrangian_unchecked(&p, &x, &y, 1.0) + 1e-12);
                assert!(u.iter().all(|v| (-1.0..=1.0).contains(v)));
            }
        }
    }
}
