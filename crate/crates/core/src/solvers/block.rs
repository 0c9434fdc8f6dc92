//! Exact minimization of the augmented Lagrangian over one block:
//!
//! ```text
//! min_x  h_k(x) + g_k(A_k x) − ⟨y, E_k x⟩ + ρ/2‖E_k x + c‖²,   c = Σ_{j≠k} E_j x_j − q
//! ```
//!
//! Closed forms are used when the quadratic part has Hessian `s·I` (prox of
//! `h/s`) or when `h` is affine (Cholesky solve). Otherwise an accelerated
//! proximal gradient loop runs to the requested proximal-gradient tolerance,
//! with an active-set Newton polish.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{AdmmError, Result};
use crate::linalg::{scalar_identity_multiple, symmetric_extremes};
use crate::problem::{Problem, SmoothKind};

pub const BLOCK_MAX_ITERS: usize = 200_000;
/// Newton steps per polish attempt.
const POLISH_NEWTON_STEPS: usize = 30;
const POLISH_EVERY: usize = 20;

#[derive(Debug, Clone)]
pub struct BlockSolve {
    pub x: DVector<f64>,
    /// `‖x − prox_h(x − ∇φ(x))‖` at exit, with unit step.
    pub prox_grad_norm: f64,
    pub iterations: usize,
}

#[derive(Debug)]
enum Quadratic {
    /// Hessian `s·I`.
    Scalar(f64),
    /// General symmetric Hessian; `chol` present when positive definite.
    Dense {
        hessian: DMatrix<f64>,
        chol: Option<Cholesky<f64, Dyn>>,
    },
}

#[derive(Debug)]
struct BlockCache {
    /// `None` for oracle smooth terms.
    quadratic: Option<Quadratic>,
    /// `A_kᵀ b_k` for quadratic terms (zero without a smooth term).
    atb: DVector<f64>,
    /// Lipschitz constant of ∇φ and strong convexity modulus.
    lip: f64,
    mu: f64,
}

/// Per-(problem, ρ) cache of block Hessians and step sizes.
#[derive(Debug)]
pub struct BlockSolver<'p> {
    problem: &'p Problem,
    rho: f64,
    caches: Vec<BlockCache>,
    full: Option<FullQuadratic>,
}

/// Smooth part of the whole Lagrangian, `½xᵀHx − (base + Eᵀy)ᵀx`, kept when
/// every smooth term is quadratic and no `h_k` has a group norm.
#[derive(Debug)]
struct FullQuadratic {
    hessian: DMatrix<f64>,
    base: DVector<f64>,
}

impl<'p> BlockSolver<'p> {
    pub fn new(problem: &'p Problem, rho: f64) -> Self {
        let caches: Vec<BlockCache> = (0..problem.num_blocks()).map(|k| build_cache(problem, k, rho)).collect();
        let full = build_full_quadratic(problem, &caches, rho);
        BlockSolver {
            problem,
            rho,
            caches,
            full,
        }
    }

    /// Active-set step on the whole `x` for the inner minimization: coordinates
    /// on a bound or at an ℓ1 kink stay fixed, the rest move along the
    /// least-squares Newton direction until a coordinate reaches a bound or
    /// zero. The smooth part is quadratic and `h` is linear on the face, so
    /// the Lagrangian does not increase along the step.
    pub(crate) fn face_step(&self, x: &DVector<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
        let full = self.full.as_ref()?;
        let problem = self.problem;
        let grad = &full.hessian * x - &full.base - problem.e().tr_mul(y);
        let mut free = Vec::new();
        let mut f = Vec::new();
        for info in problem.infos() {
            let h = &info.h;
            let l1 = h.l1_weight();
            for i in 0..info.dim {
                let j = info.offset + i;
                if h.on_box_boundary(i, x[j]) || (l1 > 0.0 && x[j] == 0.0) {
                    continue;
                }
                free.push(j);
                f.push(grad[j] + h.linear_coefficient(i).unwrap_or(0.0) + l1 * x[j].signum());
            }
        }
        if free.is_empty() {
            return None;
        }
        let sub = full.hessian.select_rows(&free).select_columns(&free);
        let svd = sub.svd(true, true);
        let cutoff = 1e-12 * svd.singular_values.max();
        let delta = svd.solve(&DVector::from_vec(f), cutoff).ok()?;
        if !delta.iter().all(|d| d.is_finite()) || delta.amax() == 0.0 {
            return None;
        }
        // Ratio test against the face: bounds and sign changes of ℓ1 coordinates.
        let mut t = 1.0_f64;
        let mut blocking = None;
        for (a, &j) in free.iter().enumerate() {
            let k = problem.infos().partition_point(|info| info.offset + info.dim <= j);
            let info = problem.info(k);
            let h = &info.h;
            let i = j - info.offset;
            let target = x[j] - delta[a];
            let mut limit = h.clamp_coordinate(i, target);
            if h.l1_weight() > 0.0 && target * x[j] < 0.0 {
                limit = 0.0;
            }
            if limit != target {
                let frac = (x[j] - limit) / delta[a];
                if frac < t {
                    t = frac.max(0.0);
                    blocking = Some((j, limit));
                }
            }
        }
        let mut u = x.clone();
        for (a, &j) in free.iter().enumerate() {
            u[j] -= t * delta[a];
        }
        if let Some((j, limit)) = blocking {
            u[j] = limit;
        }
        for info in problem.infos() {
            let uk = info.h.project_box(&u.rows(info.offset, info.dim).into_owned());
            u.rows_mut(info.offset, info.dim).copy_from(&uk);
        }
        Some(u)
    }

    pub fn problem(&self) -> &'p Problem {
        self.problem
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Gradient of the smooth part `φ` of the block-k subproblem.
    fn smooth_grad(&self, k: usize, x: &DVector<f64>, lin: &LinearData) -> DVector<f64> {
        let cache = &self.caches[k];
        match &cache.quadratic {
            Some(Quadratic::Scalar(s)) => x * *s - &lin.l,
            Some(Quadratic::Dense { hessian, .. }) => hessian * x - &lin.l,
            None => {
                let e = &self.problem.block(k).e;
                let mut g = self.problem.smooth_gradient_block(k, x);
                g += e.tr_mul(&(e * x)) * self.rho;
                g - &lin.l
            }
        }
    }

    fn prox_grad_norm(&self, k: usize, x: &DVector<f64>, lin: &LinearData) -> f64 {
        let h = &self.problem.info(k).h;
        let g = self.smooth_grad(k, x, lin);
        (x - h.prox_unchecked(&(x - g), 1.0)).norm()
    }

    /// Minimizes the block-k subproblem with the other blocks entering through
    /// `rest = Σ_{j≠k} E_j x_j − q`.
    pub fn solve(
        &self,
        k: usize,
        rest: &DVector<f64>,
        y: &DVector<f64>,
        warm: &DVector<f64>,
        tol: f64,
    ) -> Result<BlockSolve> {
        let problem = self.problem;
        let info = problem.info(k);
        let e = &problem.block(k).e;
        let cache = &self.caches[k];
        // Linear coefficient of φ: φ(x) = ½xᵀHx − lᵀx for quadratic terms; for
        // oracles the same l collects the y and rest contributions.
        let l = &cache.atb + e.tr_mul(&(y - rest * self.rho));
        let lin = LinearData { l };

        match &cache.quadratic {
            Some(Quadratic::Scalar(s)) if *s > 0.0 => {
                let x = info.h.prox_unchecked(&(&lin.l / *s), 1.0 / *s);
                let pg = self.prox_grad_norm(k, &x, &lin);
                return Ok(BlockSolve {
                    x,
                    prox_grad_norm: pg,
                    iterations: 1,
                });
            }
            Some(Quadratic::Dense { chol: Some(chol), .. }) if info.h.is_affine() => {
                // h(x) = ⟨b, x⟩ (or zero): solve Hx = l − b.
                let zero = DVector::zeros(info.dim);
                let shift = info.h.prox_unchecked(&zero, 1.0);
                let x = chol.solve(&(&lin.l + shift));
                let pg = self.prox_grad_norm(k, &x, &lin);
                return Ok(BlockSolve {
                    x,
                    prox_grad_norm: pg,
                    iterations: 1,
                });
            }
            _ => {}
        }
        self.accelerated(k, &lin, warm, tol)
    }

    fn accelerated(&self, k: usize, lin: &LinearData, warm: &DVector<f64>, tol: f64) -> Result<BlockSolve> {
        let info = self.problem.info(k);
        let h = &info.h;
        let cache = &self.caches[k];
        let step = 1.0 / cache.lip;
        let mut x = h.project_box(warm);
        let mut pg = self.prox_grad_norm(k, &x, lin);
        if pg <= tol {
            return Ok(BlockSolve {
                x,
                prox_grad_norm: pg,
                iterations: 0,
            });
        }
        let mut best = (pg, x.clone());
        let ratio = cache.mu / cache.lip;
        let constant_momentum = if ratio > 1e-12 {
            let q = ratio.sqrt();
            Some((1.0 - q) / (1.0 + q))
        } else {
            None
        };
        let polish = cache.quadratic.is_some();
        let mut z = x.clone();
        let mut t = 1.0_f64;
        for it in 1..=BLOCK_MAX_ITERS {
            let g = self.smooth_grad(k, &z, lin);
            let x_new = h.prox_unchecked(&(&z - g * step), step);
            let momentum = match constant_momentum {
                Some(beta) => beta,
                None => {
                    let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                    let beta = (t - 1.0) / t_new;
                    t = t_new;
                    beta
                }
            };
            // Gradient-based adaptive restart.
            let restart = (&z - &x_new).dot(&(&x_new - &x)) > 0.0;
            if restart {
                z = x_new.clone();
                t = 1.0;
            } else {
                z = &x_new + (&x_new - &x) * momentum;
            }
            x = x_new;
            pg = self.prox_grad_norm(k, &x, lin);
            if pg < best.0 {
                best = (pg, x.clone());
            }
            if pg <= tol {
                return Ok(BlockSolve {
                    x,
                    prox_grad_norm: pg,
                    iterations: it,
                });
            }
            if polish && it % POLISH_EVERY == 0 {
                if let Some(candidate) = self.polish(k, &x, lin) {
                    let cpg = self.prox_grad_norm(k, &candidate, lin);
                    if cpg <= tol {
                        return Ok(BlockSolve {
                            x: candidate,
                            prox_grad_norm: cpg,
                            iterations: it,
                        });
                    }
                    if cpg < best.0 {
                        best = (cpg, candidate.clone());
                        x = candidate;
                        z = x.clone();
                        t = 1.0;
                    }
                }
            }
        }
        Err(AdmmError::IterationCap {
            iterations: BLOCK_MAX_ITERS,
            residual: best.0,
            best: best.1,
        })
    }

    /// Guesses the active set from `x` (coordinates on a bound, at a kink of
    /// the ℓ1 term or in a zero group stay fixed) and solves the stationarity
    /// equations of the remaining coordinates by Newton's method. Without a
    /// group norm the equations are linear and one step suffices.
    fn polish(&self, k: usize, x: &DVector<f64>, lin: &LinearData) -> Option<DVector<f64>> {
        let hessian = match &self.caches[k].quadratic {
            Some(Quadratic::Dense { hessian, .. }) => hessian,
            _ => return None,
        };
        let h = &self.problem.info(k).h;
        let n = x.len();
        let l1 = h.l1_weight();
        let groups = h.group_structure();
        let mut group_of = vec![None; n];
        if let Some((gs, _)) = groups {
            for (gi, g) in gs.iter().enumerate() {
                for &i in g {
                    group_of[i] = Some(gi);
                }
            }
        }
        let group_norm = |u: &DVector<f64>, gi: usize| -> f64 {
            let (gs, _) = groups.expect("group index without groups");
            gs[gi].iter().map(|&i| u[i] * u[i]).sum::<f64>().sqrt()
        };
        let projected = h.project_box(x);
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let on_bound = projected[i] == x[i] && h.on_box_boundary(i, x[i]);
                let at_kink = l1 > 0.0 && x[i] == 0.0;
                let zero_group = group_of[i].is_some_and(|gi| group_norm(x, gi) == 0.0);
                !on_bound && !at_kink && !zero_group
            })
            .collect();
        if free.is_empty() {
            return None;
        }
        let signs: Vec<f64> = free.iter().map(|&i| x[i].signum()).collect();
        let nf = free.len();
        let mut u = x.clone();
        for _ in 0..POLISH_NEWTON_STEPS {
            let grad = hessian * &u - &lin.l;
            let mut f = DVector::zeros(nf);
            let mut jac = DMatrix::zeros(nf, nf);
            for (a, &i) in free.iter().enumerate() {
                f[a] = grad[i] + h.linear_coefficient(i).unwrap_or(0.0) + l1 * signs[a];
                for (b, &j) in free.iter().enumerate() {
                    jac[(a, b)] = hessian[(i, j)];
                }
            }
            if let Some((_, weights)) = groups {
                for (a, &i) in free.iter().enumerate() {
                    let Some(gi) = group_of[i] else { continue };
                    let norm = group_norm(&u, gi);
                    if norm == 0.0 {
                        return None;
                    }
                    let w = weights[gi];
                    f[a] += w * u[i] / norm;
                    for (b, &j) in free.iter().enumerate() {
                        if group_of[j] == Some(gi) {
                            let id = if i == j { 1.0 / norm } else { 0.0 };
                            jac[(a, b)] += w * (id - u[i] * u[j] / norm.powi(3));
                        }
                    }
                }
            }
            let delta = jac.cholesky()?.solve(&f);
            for (a, &i) in free.iter().enumerate() {
                u[i] -= delta[a];
            }
            if groups.is_none() || delta.norm() <= 1e-15 * (1.0 + u.norm()) {
                break;
            }
        }
        Some(h.project_box(&u))
    }
}

struct LinearData {
    l: DVector<f64>,
}

fn build_cache(problem: &Problem, k: usize, rho: f64) -> BlockCache {
    let block = problem.block(k);
    let info = problem.info(k);
    let ete_rho = &info.ete * rho;
    match block.smooth.as_ref().map(|g| &g.kind) {
        Some(SmoothKind::Oracle(_)) => BlockCache {
            quadratic: None,
            atb: DVector::zeros(info.dim),
            lip: (info.composed_lipschitz() + rho * info.ete_norm).max(f64::MIN_POSITIVE),
            mu: rho * info.ete_lambda_min,
        },
        kind => {
            let (hessian, atb) = match (kind, &block.a) {
                (Some(SmoothKind::Quadratic { target }), Some(a)) => (a.tr_mul(a) + ete_rho, a.tr_mul(target)),
                (Some(SmoothKind::Quadratic { target }), None) => {
                    (DMatrix::identity(info.dim, info.dim) + ete_rho, target.clone())
                }
                _ => (ete_rho, DVector::zeros(info.dim)),
            };
            let (mu, lmax) = symmetric_extremes(&hessian);
            let quadratic = match scalar_identity_multiple(&hessian) {
                Some(s) => Quadratic::Scalar(s),
                None => {
                    let chol = if mu > 1e-12 * lmax.abs().max(1e-300) {
                        hessian.clone().cholesky()
                    } else {
                        None
                    };
                    Quadratic::Dense { hessian, chol }
                }
            };
            BlockCache {
                quadratic: Some(quadratic),
                atb,
                lip: lmax.max(f64::MIN_POSITIVE),
                mu: mu.max(0.0),
            }
        }
    }
}

fn build_full_quadratic(problem: &Problem, caches: &[BlockCache], rho: f64) -> Option<FullQuadratic> {
    if !caches.iter().all(|c| c.quadratic.is_some()) || !problem.infos().iter().all(|i| i.h.is_separable()) {
        return None;
    }
    let e = problem.e();
    let mut hessian = e.tr_mul(e) * rho;
    let mut base = e.tr_mul(problem.q()) * rho;
    for (k, info) in problem.infos().iter().enumerate() {
        let block = problem.block(k);
        let smooth = match (&block.smooth, &block.a) {
            (Some(_), Some(a)) => a.tr_mul(a),
            (Some(_), None) => DMatrix::identity(info.dim, info.dim),
            (None, _) => continue,
        };
        let mut view = hessian.view_mut((info.offset, info.offset), (info.dim, info.dim));
        view += smooth;
        let mut b = base.rows_mut(info.offset, info.dim);
        b += &caches[k].atb;
    }
    Some(FullQuadratic { hessian, base })
}

/// Solves one block subproblem with the other blocks fixed at `others`.
///
/// Builds the block cache on the fly; loops should hold a [`BlockSolver`].
pub fn solve_block(
    problem: &Problem,
    k: usize,
    others_fixed: &DVector<f64>,
    y: &DVector<f64>,
    rho: f64,
    tol_block: f64,
) -> Result<DVector<f64>> {
    problem.check_conformal(others_fixed)?;
    problem.check_multiplier(y)?;
    if k >= problem.num_blocks() {
        return Err(AdmmError::InvalidParameter(format!("block index {k} out of range")));
    }
    if !(rho > 0.0) {
        return Err(AdmmError::InvalidParameter(format!("rho = {rho} must be positive")));
    }
    let solver = BlockSolver::new(problem, rho);
    let info = problem.info(k);
    let xk = others_fixed.rows(info.offset, info.dim).into_owned();
    let rest = problem.e() * others_fixed - &problem.block(k).e * &xk - problem.q();
    Ok(solver.solve(k, &rest, y, &xk, tol_block)?.x)
}
