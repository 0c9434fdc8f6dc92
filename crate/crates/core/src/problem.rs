//! The separable convex program
//!
//! ```text
//! minimize   Σ_k g_k(A_k x_k) + h_k(x_k)
//! subject to Σ_k E_k x_k = q
//! ```
//!
//! together with build-time validation, the constants the solvers need
//! (per-block λ_min(E_kᵀE_k), norms of E_k and A_k, the global ‖E‖) and a
//! report on the checkable standing assumptions.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{AdmmError, Result};
use crate::linalg::{spectral_norm, symmetric_extremes};
use crate::prox::ProxTerm;

/// Relative tolerance for the full-column-rank test on E_kᵀE_k.
pub const RANK_TOL: f64 = 1e-10;

/// A user-supplied smooth function `g: ℝᵖ → ℝ` with its gradient.
pub trait SmoothOracle: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, z: &DVector<f64>) -> f64;
    fn gradient(&self, z: &DVector<f64>) -> DVector<f64>;
}

#[derive(Debug, Clone)]
pub enum SmoothKind {
    /// `g(z) = ½‖z − target‖²`
    Quadratic { target: DVector<f64> },
    Oracle(Arc<dyn SmoothOracle>),
}

/// Smooth part `g_k` of a block objective.
///
/// `lipschitz` is the Lipschitz constant of `∇g_k`; the constant of the
/// composed map `x ↦ A_kᵀ∇g_k(A_k x)` is [`BlockInfo::composed_lipschitz`].
#[derive(Debug, Clone)]
pub struct SmoothTerm {
    pub kind: SmoothKind,
    pub lipschitz: f64,
}

impl SmoothTerm {
    pub fn quadratic(target: DVector<f64>) -> Self {
        SmoothTerm {
            kind: SmoothKind::Quadratic { target },
            lipschitz: 1.0,
        }
    }

    pub fn oracle(oracle: Arc<dyn SmoothOracle>, lipschitz: f64) -> Self {
        SmoothTerm {
            kind: SmoothKind::Oracle(oracle),
            lipschitz,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SmoothKind::Quadratic { target } => target.len(),
            SmoothKind::Oracle(o) => o.dim(),
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.kind, SmoothKind::Quadratic { .. })
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        match &self.kind {
            SmoothKind::Quadratic { target } => 0.5 * (z - target).norm_squared(),
            SmoothKind::Oracle(o) => o.value(z),
        }
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            SmoothKind::Quadratic { target } => z - target,
            SmoothKind::Oracle(o) => o.gradient(z),
        }
    }
}

/// Per-coordinate interval constraint, merged into the block's prox term at build.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxBounds {
    pub fn uniform(n: usize, lo: f64, hi: f64) -> Self {
        BoxBounds {
            lo: vec![lo; n],
            hi: vec![hi; n],
        }
    }
}

/// One variable block: coupling columns `E_k`, optional smooth term `g_k(A_k ·)`,
/// nonsmooth term and optional box.
#[derive(Debug, Clone)]
pub struct Block {
    pub e: DMatrix<f64>,
    pub a: Option<DMatrix<f64>>,
    pub smooth: Option<SmoothTerm>,
    pub nonsmooth: ProxTerm,
    pub bounds: Option<BoxBounds>,
}

impl Block {
    pub fn new(e: DMatrix<f64>) -> Self {
        Block {
            e,
            a: None,
            smooth: None,
            nonsmooth: ProxTerm::Zero,
            bounds: None,
        }
    }

    pub fn with_nonsmooth(mut self, h: ProxTerm) -> Self {
        self.nonsmooth = h;
        self
    }

    /// Smooth term applied to `x_k` directly (A_k = I).
    pub fn with_smooth(mut self, g: SmoothTerm) -> Self {
        self.smooth = Some(g);
        self
    }

    /// Smooth term applied to `A_k x_k`.
    pub fn with_composed_smooth(mut self, a: DMatrix<f64>, g: SmoothTerm) -> Self {
        self.a = Some(a);
        self.smooth = Some(g);
        self
    }

    pub fn with_box(mut self, lo: f64, hi: f64) -> Self {
        self.bounds = Some(BoxBounds::uniform(self.e.ncols(), lo, hi));
        self
    }

    pub fn with_bounds(mut self, bounds: BoxBounds) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn dim(&self) -> usize {
        self.e.ncols()
    }
}

/// Build-time data derived from a block.
#[derive(Debug, Clone)]
pub struct BlockInfo {
    pub offset: usize,
    pub dim: usize,
    /// Nonsmooth term with the box folded in.
    pub h: ProxTerm,
    pub ete: DMatrix<f64>,
    pub ete_lambda_min: f64,
    /// ‖E_kᵀE_k‖ = λ_max(E_kᵀE_k).
    pub ete_norm: f64,
    pub e_norm: f64,
    /// ‖A_k‖ (1 when the smooth term acts on x_k directly, 0 without a smooth term).
    pub a_norm: f64,
    /// Lipschitz constant of ∇g_k (0 without a smooth term).
    pub lipschitz: f64,
}

impl BlockInfo {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.dim
    }

    /// Lipschitz constant of `x ↦ A_kᵀ∇g_k(A_k x)`, i.e. `L‖A_k‖²`.
    pub fn composed_lipschitz(&self) -> f64 {
        self.lipschitz * self.a_norm * self.a_norm
    }

    pub fn full_column_rank(&self) -> bool {
        self.ete_lambda_min > RANK_TOL * self.e_norm * self.e_norm
    }
}

/// Immutable, validated problem instance.
#[derive(Debug, Clone)]
pub struct Problem {
    blocks: Vec<Block>,
    info: Vec<BlockInfo>,
    q: DVector<f64>,
    e_full: DMatrix<f64>,
    e_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlackSign {
    /// `Ex ≥ q`, rewritten as `Ex − s = q`, `s ≥ 0`.
    Ge,
    /// `Ex ≤ q`, rewritten as `Ex + s = q`, `s ≥ 0`.
    Le,
}

/// Which standing assumptions hold, per block, and which variants may run.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub full_column_rank: Vec<bool>,
    pub compact_box: Vec<bool>,
    /// `None` for blocks without a smooth term; oracles cannot be certified.
    pub strongly_convex_g: Vec<Option<bool>>,
    /// Finiteness of Σh_k on the level set; holds for every built-in term.
    pub h_finite_on_level_set: bool,
    pub ok_gauss_seidel: bool,
    pub ok_jacobi: bool,
    pub ok_proximal: bool,
}

impl AssumptionReport {
    pub fn all_compact(&self) -> bool {
        self.compact_box.iter().all(|&c| c)
    }
}

fn dim_err(block: usize, reason: String) -> AdmmError {
    AdmmError::BlockDimension { block, reason }
}

/// Validates blocks and computes the problem metadata.
pub fn build_problem(blocks: Vec<Block>, q: DVector<f64>) -> Result<Problem> {
    if blocks.is_empty() {
        return Err(AdmmError::EmptyProblem);
    }
    let m = q.len();
    if q.iter().any(|v| !v.is_finite()) {
        return Err(AdmmError::InvalidParameter("q has non-finite entries".into()));
    }
    let mut info = Vec::with_capacity(blocks.len());
    let mut offset = 0;
    for (k, block) in blocks.iter().enumerate() {
        let n_k = block.e.ncols();
        if block.e.nrows() != m {
            return Err(dim_err(
                k,
                format!("E has {} rows but q has length {m}", block.e.nrows()),
            ));
        }
        if n_k == 0 {
            return Err(dim_err(k, "block has zero columns".into()));
        }
        if block.e.iter().any(|v| !v.is_finite()) {
            return Err(dim_err(k, "E has non-finite entries".into()));
        }
        let (a_norm, lipschitz) = match (&block.a, &block.smooth) {
            (Some(_), None) => {
                return Err(dim_err(k, "A is given without a smooth term".into()));
            }
            (None, None) => (0.0, 0.0),
            (a, Some(g)) => {
                let p = g.dim();
                let a_norm = match a {
                    Some(a) => {
                        if a.ncols() != n_k {
                            return Err(dim_err(
                                k,
                                format!("A has {} columns but E has {n_k}", a.ncols()),
                            ));
                        }
                        if a.nrows() != p {
                            return Err(dim_err(
                                k,
                                format!("A has {} rows but the smooth term expects {p}", a.nrows()),
                            ));
                        }
                        spectral_norm(a)
                    }
                    None => {
                        if p != n_k {
                            return Err(dim_err(
                                k,
                                format!("smooth term expects dimension {p} but block has {n_k}"),
                            ));
                        }
                        1.0
                    }
                };
                if !(g.lipschitz > 0.0) || !g.lipschitz.is_finite() {
                    return Err(dim_err(k, format!("Lipschitz constant {} must be positive", g.lipschitz)));
                }
                if g.is_quadratic() && g.lipschitz < 1.0 - 1e-8 {
                    return Err(dim_err(
                        k,
                        format!("quadratic term needs Lipschitz constant ≥ 1, got {}", g.lipschitz),
                    ));
                }
                (a_norm, g.lipschitz)
            }
        };
        let h = match &block.bounds {
            Some(b) => {
                if b.lo.len() != n_k || b.hi.len() != n_k {
                    return Err(dim_err(k, "box bounds do not match the block dimension".into()));
                }
                block.nonsmooth.clone().with_box(b.lo.clone(), b.hi.clone())
            }
            None => block.nonsmooth.clone(),
        };
        h.validate(n_k).map_err(|e| dim_err(k, e.to_string()))?;
        let ete = block.e.transpose() * &block.e;
        let (lmin, lmax) = symmetric_extremes(&ete);
        info.push(BlockInfo {
            offset,
            dim: n_k,
            h,
            ete_lambda_min: lmin.max(0.0),
            ete_norm: lmax.max(0.0),
            e_norm: spectral_norm(&block.e),
            ete,
            a_norm,
            lipschitz,
        });
        offset += n_k;
    }
    let mut e_full = DMatrix::zeros(m, offset);
    for (block, inf) in blocks.iter().zip(info.iter()) {
        e_full.view_mut((0, inf.offset), (m, inf.dim)).copy_from(&block.e);
    }
    let e_norm = spectral_norm(&e_full);
    let problem = Problem {
        blocks,
        info,
        q,
        e_full,
        e_norm,
    };
    for k in 0..problem.num_blocks() {
        if matches!(problem.blocks[k].smooth.as_ref().map(|g| &g.kind), Some(SmoothKind::Oracle(_))) {
            let worst = gradient_check(&problem, k, 3, 0x5eed + k as u64)?;
            if worst > 1e-5 {
                return Err(dim_err(
                    k,
                    format!("gradient oracle fails the finite-difference check (relative error {worst:e})"),
                ));
            }
        }
    }
    Ok(problem)
}

/// Largest relative error between the supplied composed gradient
/// `A_kᵀ∇g_k(A_k x)` and central differences of `g_k(A_k ·)` at random points.
pub fn gradient_check(problem: &Problem, k: usize, samples: usize, seed: u64) -> Result<f64> {
    let info = &problem.info[k];
    if problem.blocks[k].smooth.is_none() {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let raw = DVector::from_fn(info.dim, |_, _| StandardNormal.sample(&mut rng));
        let x = info.h.project_box(&raw);
        let grad = problem.smooth_gradient_block(k, &x);
        let step = 1e-6 * (1.0 + x.norm());
        let mut fd = DVector::zeros(info.dim);
        for i in 0..info.dim {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += step;
            xm[i] -= step;
            fd[i] = (problem.smooth_value_block(k, &xp) - problem.smooth_value_block(k, &xm)) / (2.0 * step);
        }
        let err = (&fd - &grad).norm() / grad.norm().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

impl Problem {
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Number of coupling constraints.
    pub fn m(&self) -> usize {
        self.q.len()
    }

    /// Total number of variables.
    pub fn n(&self) -> usize {
        self.e_full.ncols()
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> &Block {
        &self.blocks[k]
    }

    pub fn info(&self, k: usize) -> &BlockInfo {
        &self.info[k]
    }

    pub fn infos(&self) -> &[BlockInfo] {
        &self.info
    }

    /// The full coupling matrix `E = (E_1, …, E_K)`.
    pub fn e(&self) -> &DMatrix<f64> {
        &self.e_full
    }

    /// Spectral norm ‖E‖.
    pub fn e_norm(&self) -> f64 {
        self.e_norm
    }

    pub fn min_ete_lambda(&self) -> f64 {
        self.info.iter().map(|i| i.ete_lambda_min).fold(f64::INFINITY, f64::min)
    }

    pub fn block_range(&self, k: usize) -> Range<usize> {
        self.info[k].range()
    }

    pub fn x_block<'a>(&self, x: &'a DVector<f64>, k: usize) -> DVectorView<'a, f64> {
        x.rows(self.info[k].offset, self.info[k].dim)
    }

    pub fn check_conformal(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n() {
            return Err(AdmmError::Dimension {
                what: "primal block-vector",
                expected: self.n(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn check_multiplier(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.m() {
            return Err(AdmmError::Dimension {
                what: "multiplier",
                expected: self.m(),
                got: y.len(),
            });
        }
        Ok(())
    }

    /// `Ex − q`.
    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.e_full * x - &self.q
    }

    /// `g_k(A_k x_k)`, zero without a smooth term.
    pub fn smooth_value_block(&self, k: usize, xk: &DVector<f64>) -> f64 {
        let block = &self.blocks[k];
        match &block.smooth {
            None => 0.0,
            Some(g) => match &block.a {
                Some(a) => g.value(&(a * xk)),
                None => g.value(xk),
            },
        }
    }

    /// `A_kᵀ∇g_k(A_k x_k)`.
    pub fn smooth_gradient_block(&self, k: usize, xk: &DVector<f64>) -> DVector<f64> {
        let block = &self.blocks[k];
        match &block.smooth {
            None => DVector::zeros(xk.len()),
            Some(g) => match &block.a {
                Some(a) => a.tr_mul(&g.gradient(&(a * xk))),
                None => g.gradient(xk),
            },
        }
    }

    /// `f(x) = Σ_k g_k(A_k x_k) + h_k(x_k)`; `f64::INFINITY` outside a box.
    pub fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_conformal(x)?;
        Ok(self.objective_unchecked(x))
    }

    pub(crate) fn objective_unchecked(&self, x: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for k in 0..self.num_blocks() {
            let xk: DVector<f64> = self.x_block(x, k).into_owned();
            let h = self.info[k].h.value(&xk);
            if h == f64::INFINITY {
                return f64::INFINITY;
            }
            total += h + self.smooth_value_block(k, &xk);
        }
        total
    }

    /// `‖Σ_k E_k x_k − q‖`.
    pub fn feasibility_residual(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_conformal(x)?;
        Ok(self.residual(x).norm())
    }

    /// Zero, projected into every block's box.
    pub fn initial_point(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.n());
        for info in &self.info {
            let xk = info.h.project_box(&DVector::zeros(info.dim));
            x.rows_mut(info.offset, info.dim).copy_from(&xk);
        }
        x
    }

    pub fn check_assumptions(&self) -> AssumptionReport {
        let full_column_rank: Vec<bool> = self.info.iter().map(|i| i.full_column_rank()).collect();
        let compact_box = self.info.iter().map(|i| i.h.has_compact_box()).collect();
        let strongly_convex_g = self
            .blocks
            .iter()
            .map(|b| b.smooth.as_ref().map(|g| g.is_quadratic()))
            .collect();
        let all_rank = full_column_rank.iter().all(|&f| f);
        AssumptionReport {
            full_column_rank,
            compact_box,
            strongly_convex_g,
            h_finite_on_level_set: true,
            ok_gauss_seidel: all_rank,
            ok_jacobi: all_rank,
            ok_proximal: true,
        }
    }

    /// Appends a slack block turning `Ex ≥ q` (or `Ex ≤ q`) into an equality.
    pub fn add_slack_block(&self, sign: SlackSign) -> Result<Problem> {
        let m = self.m();
        let e = match sign {
            SlackSign::Ge => -DMatrix::identity(m, m),
            SlackSign::Le => DMatrix::identity(m, m),
        };
        let mut blocks = self.blocks.clone();
        blocks.push(Block::new(e).with_nonsmooth(ProxTerm::NonnegIndicator));
        build_problem(blocks, self.q.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_block_metadata() {
        let p = build_problem(vec![Block::new(DMatrix::identity(2, 2))], DVector::zeros(2)).unwrap();
        assert_relative_eq!(p.info(0).ete_lambda_min, 1.0, epsilon = 1e-14);
        assert_relative_eq!(p.e_norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn row_mismatch_names_block() {
        let err = build_problem(
            vec![Block::new(DMatrix::zeros(3, 1)), Block::new(DMatrix::zeros(4, 1))],
            DVector::zeros(3),
        )
        .unwrap_err();
        match err {
            AdmmError::BlockDimension { block, .. } => assert_eq!(block, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_problem_rejected() {
        assert!(matches!(build_problem(vec![], DVector::zeros(1)), Err(AdmmError::EmptyProblem)));
    }

    #[test]
    fn single_column_lambda_min() {
        let p = build_problem(vec![Block::new(DMatrix::from_element(2, 1, 1.0))], DVector::zeros(2)).unwrap();
        assert_relative_eq!(p.info(0).ete_lambda_min, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn a_without_smooth_rejected() {
        let mut b = Block::new(DMatrix::identity(2, 2));
        b.a = Some(DMatrix::identity(2, 2));
        assert!(build_problem(vec![b], DVector::zeros(2)).is_err());
    }

    #[test]
    fn objective_values() {
        let p = build_problem(
            vec![Block::new(DMatrix::identity(2, 2)).with_nonsmooth(ProxTerm::l1(2.0))],
            DVector::zeros(2),
        )
        .unwrap();
        assert_eq!(p.objective(&DVector::zeros(2)).unwrap(), 0.0);
        assert_eq!(p.objective(&DVector::from_vec(vec![1.0, -3.0])).unwrap(), 8.0);
        assert!(p.objective(&DVector::zeros(3)).is_err());
        let boxed = build_problem(
            vec![Block::new(DMatrix::identity(2, 2)).with_box(-1.0, 1.0)],
            DVector::zeros(2),
        )
        .unwrap();
        assert_eq!(boxed.objective(&DVector::from_vec(vec![2.0, 0.0])).unwrap(), f64::INFINITY);
    }

    #[test]
    fn feasibility_values() {
        let p = build_problem(vec![Block::new(DMatrix::identity(2, 2))], DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_relative_eq!(p.feasibility_residual(&DVector::zeros(2)).unwrap(), 2f64.sqrt());
        assert_eq!(p.feasibility_residual(&DVector::from_vec(vec![1.0, 1.0])).unwrap(), 0.0);
        let mut prev = 0.0;
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            let r = p.feasibility_residual(&DVector::from_vec(vec![t, t])).unwrap();
            if i > 0 {
                assert!((r - prev).abs() <= 0.1 * 2f64.sqrt() + 1e-12);
            }
            prev = r;
        }
    }

    #[test]
    fn rank_flags() {
        let p = build_problem(
            vec![
                Block::new(DMatrix::identity(2, 2)).with_box(-1.0, 1.0),
                Block::new(DMatrix::from_element(2, 2, 1.0)),
            ],
            DVector::zeros(2),
        )
        .unwrap();
        let rep = p.check_assumptions();
        assert_eq!(rep.full_column_rank, vec![true, false]);
        assert_eq!(rep.compact_box, vec![true, false]);
        assert!(!rep.ok_gauss_seidel);
        assert!(rep.ok_proximal);
    }

    #[test]
    fn slack_blocks() {
        let p = build_problem(vec![Block::new(DMatrix::identity(2, 2))], DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let s = p.add_slack_block(SlackSign::Ge).unwrap();
        assert_eq!(s.num_blocks(), 2);
        assert_eq!(s.block(1).e, -DMatrix::<f64>::identity(2, 2));
        assert_eq!(s.info(1).h, ProxTerm::NonnegIndicator);
        // x = (1, 0), slack = Ex − q = 0
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.feasibility_residual(&x).unwrap(), 0.0);
        assert!(s.objective(&x).unwrap().is_finite());
        let s2 = s.add_slack_block(SlackSign::Le).unwrap();
        assert_eq!(s2.num_blocks(), 3);
        assert_eq!(s2.block(2).e, DMatrix::<f64>::identity(2, 2));
    }

    #[derive(Debug)]
    struct Quartic;

    impl SmoothOracle for Quartic {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, z: &DVector<f64>) -> f64 {
            z.iter().map(|v| v.powi(4) / 4.0 + v * v / 2.0).sum()
        }
        fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
            z.map(|v| v.powi(3) + v)
        }
    }

    #[derive(Debug)]
    struct WrongGradient;

    impl SmoothOracle for WrongGradient {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, z: &DVector<f64>) -> f64 {
            z.norm_squared()
        }
        fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
            z.clone()
        }
    }

    #[test]
    fn oracle_gradient_check() {
        let good = Block::new(DMatrix::identity(2, 2))
            .with_smooth(SmoothTerm::oracle(Arc::new(Quartic), 4.0))
            .with_box(-1.0, 1.0);
        let p = build_problem(vec![good], DVector::zeros(2)).unwrap();
        assert!(gradient_check(&p, 0, 10, 1).unwrap() < 1e-5);
        let bad = Block::new(DMatrix::identity(2, 2)).with_smooth(SmoothTerm::oracle(Arc::new(WrongGradient), 2.0));
        assert!(build_problem(vec![bad], DVector::zeros(2)).is_err());
    }
}
