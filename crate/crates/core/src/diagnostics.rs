//! Optimality gaps and per-iteration checks of the descent, gap-decrease and
//! rate properties on recorded runs.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AdmmError, Result};
use crate::lagrangian::{lagrangian_unchecked, minimize_lagrangian_with, proximal_gradient_unchecked};
use crate::linalg::symmetric_extremes;
use crate::problem::Problem;
use crate::solvers::block::BlockSolver;
use crate::solvers::{nu_constant, GapMonitor, GapValues, IterateState, Variant};
use crate::trace::TraceRecord;

/// Default accuracy of the reference solution.
pub const DEFAULT_REF_TOL: f64 = 1e-10;
/// Cap on method-of-multipliers steps when computing the reference.
pub const REFERENCE_MAX_ITERS: usize = 20_000;
/// Minimum number of tail points for a rate fit.
pub const MIN_FIT_POINTS: usize = 20;
/// Fraction of the above-floor records discarded before fitting.
pub const DEFAULT_BURN_IN: f64 = 0.4;

/// Near-exact primal-dual pair used to measure optimality gaps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reference {
    pub x_star: DVector<f64>,
    pub y_star: DVector<f64>,
    pub d_star: f64,
    pub f_star: f64,
    pub tol_ref: f64,
}

/// Method of multipliers `y ← y + ρ∇d(y)` from `y = 0` until `‖∇d(y)‖ ≤ tol_ref`.
///
/// When `‖∇d‖` stalls the multiplier step uses a larger penalty (up to
/// [`MAX_PENALTY_BOOST`]`·ρ`); the dual optimal set does not depend on the
/// penalty, and the returned pair is always certified at the caller's `ρ`.
pub fn reference_solution(problem: &Problem, rho: f64, tol_ref: f64) -> Result<Reference> {
    reference_solution_from(problem, rho, tol_ref, &DVector::zeros(problem.m()))
}

/// Largest factor by which the reference solver raises the penalty.
pub const MAX_PENALTY_BOOST: f64 = 1e4;
/// Iterations over which `‖∇d‖` must halve before the penalty is raised.
const STALL_WINDOW: usize = 50;

/// [`reference_solution`] started from a given multiplier.
pub fn reference_solution_from(problem: &Problem, rho: f64, tol_ref: f64, y0: &DVector<f64>) -> Result<Reference> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(AdmmError::InvalidParameter(format!("rho = {rho} must be positive")));
    }
    if !(tol_ref > 0.0 && tol_ref <= DEFAULT_REF_TOL) {
        return Err(AdmmError::InvalidParameter(format!(
            "reference tolerance {tol_ref} must lie in (0, {DEFAULT_REF_TOL}]"
        )));
    }
    problem.check_multiplier(y0)?;
    let certify = BlockSolver::new(problem, rho);
    let inner_tol = 0.1 * tol_ref;
    let mut penalty = rho;
    let mut solver = BlockSolver::new(problem, penalty);
    let mut y = y0.clone();
    let mut warm: Option<DVector<f64>> = None;
    let mut history: Vec<f64> = Vec::new();
    for _ in 0..REFERENCE_MAX_ITERS {
        let inner = minimize_lagrangian_with(&solver, &y, inner_tol, warm.as_ref())?;
        let g = inner.dual_grad.norm();
        if g <= tol_ref {
            let at_rho = if penalty == rho {
                inner
            } else {
                minimize_lagrangian_with(&certify, &y, inner_tol, Some(&inner.x_of_y))?
            };
            let f = problem.objective_unchecked(&at_rho.x_of_y);
            // Stopping on ‖∇d‖ alone can leave |f − d| = |⟨y,∇d⟩ − ρ/2‖∇d‖²| above
            // the duality tolerance when ‖y‖ is large.
            if at_rho.dual_grad.norm() <= tol_ref && (f - at_rho.d_value).abs() <= tol_ref {
                return Ok(Reference {
                    x_star: at_rho.x_of_y,
                    y_star: y,
                    d_star: at_rho.d_value,
                    f_star: f,
                    tol_ref,
                });
            }
            warm = Some(at_rho.x_of_y);
            y += &at_rho.dual_grad * rho;
            continue;
        }
        history.push(g);
        if history.len() > STALL_WINDOW && penalty < MAX_PENALTY_BOOST * rho {
            let before = history[history.len() - 1 - STALL_WINDOW];
            if g > 0.5 * before {
                penalty = (penalty * 10.0).min(MAX_PENALTY_BOOST * rho);
                solver = BlockSolver::new(problem, penalty);
                history.clear();
            }
        }
        y += &inner.dual_grad * penalty;
        warm = Some(inner.x_of_y);
    }
    Err(AdmmError::IterationCap {
        iterations: REFERENCE_MAX_ITERS,
        residual: f64::NAN,
        best: y,
    })
}

/// Evaluates `Δ_p`, `Δ_d` against a fixed reference, warm starting each
/// inner solve from the previous `x(y)`.
#[derive(Debug)]
pub struct ReferenceMonitor<'p> {
    solver: BlockSolver<'p>,
    reference: Reference,
    tol: f64,
    warm: Option<DVector<f64>>,
}

impl<'p> ReferenceMonitor<'p> {
    /// Computes the reference first; gaps are then evaluated at inner
    /// accuracy `0.1·tol_ref`.
    pub fn new(problem: &'p Problem, rho: f64, tol_ref: f64) -> Result<Self> {
        let reference = reference_solution(problem, rho, tol_ref)?;
        Ok(Self::with_reference(problem, rho, reference))
    }

    pub fn with_reference(problem: &'p Problem, rho: f64, reference: Reference) -> Self {
        let tol = 0.1 * reference.tol_ref;
        ReferenceMonitor {
            solver: BlockSolver::new(problem, rho),
            warm: Some(reference.x_star.clone()),
            reference,
            tol,
        }
    }

    pub fn reference(&self) -> &Reference {
        &self.reference
    }
}

impl GapMonitor for ReferenceMonitor<'_> {
    fn gaps(&mut self, x_next: &DVector<f64>, y: &DVector<f64>) -> Result<GapValues> {
        let problem = self.solver.problem();
        let inner = minimize_lagrangian_with(&self.solver, y, self.tol, self.warm.as_ref())?;
        let l_next = lagrangian_unchecked(problem, x_next, y, self.solver.rho());
        let d_y = inner.d_value;
        self.warm = Some(inner.x_of_y);
        Ok(GapValues {
            delta_p: l_next - d_y,
            delta_d: self.reference.d_star - d_y,
            d_y,
        })
    }

    fn slack(&self) -> f64 {
        10.0 * self.reference.tol_ref
    }
}

/// Gap data at record `r`, which needs the inner oracle.
#[derive(Debug, Clone)]
pub struct RecordGaps {
    pub delta_p: f64,
    pub delta_d: f64,
    pub d_y: f64,
    /// `Ex̄^r − q` with `x̄^r = x(y^r)`.
    pub res_bar: DVector<f64>,
}

/// Everything the checks need about the transition `r → r + 1`.
#[derive(Debug, Clone)]
pub struct GapRecord {
    pub r: usize,
    /// `L(x^r; y^r)`
    pub l_cur: f64,
    /// `L(x^{r+1}; y^r)`
    pub l_next: f64,
    /// `L(x^r; y^{r−1})`, absent at the first state.
    pub l_cur_prev_y: Option<f64>,
    /// Dual step that produced `y^r`, absent at the first state.
    pub alpha_prev: Option<f64>,
    pub step: f64,
    pub pg: f64,
    /// `Ex^r − q`
    pub res: DVector<f64>,
    /// `Ex^{r+1} − q`
    pub res_next: DVector<f64>,
    pub y: DVector<f64>,
    /// `f(x^{r+1})`
    pub f_next: f64,
    pub gaps: Option<RecordGaps>,
}

impl GapRecord {
    pub fn combined(&self) -> Option<f64> {
        self.gaps.as_ref().map(|g| g.delta_p + g.delta_d)
    }

    pub fn trace_record(&self) -> TraceRecord {
        let mut t = TraceRecord::new(self.r);
        t.l_val = self.l_next;
        t.feas = self.res.norm();
        t.step = self.step;
        t.pg = self.pg;
        t.f_val = self.f_next;
        if let Some(g) = &self.gaps {
            t.delta_p = g.delta_p;
            t.delta_d = g.delta_d;
            t.combined = g.delta_p + g.delta_d;
            t.d_y = g.d_y;
        }
        t
    }
}

/// Dual step recovered from `y^r − y^{r−1} = −α(Ex^r − q)`; zero when the
/// residual vanishes.
fn infer_alpha(prev_y: &DVector<f64>, y: &DVector<f64>, res: &DVector<f64>) -> f64 {
    let rr = res.norm_squared();
    if rr == 0.0 {
        0.0
    } else {
        -(y - prev_y).dot(res) / rr
    }
}

fn check_states(problem: &Problem, states: &[IterateState], alphas: Option<&[f64]>) -> Result<()> {
    if states.len() < 2 {
        return Err(AdmmError::Insufficient(format!(
            "need at least two iterates, got {}",
            states.len()
        )));
    }
    for s in states {
        problem.check_conformal(&s.x)?;
        problem.check_multiplier(&s.y)?;
    }
    if let Some(a) = alphas {
        if a.len() + 1 < states.len() {
            return Err(AdmmError::Dimension {
                what: "dual step sizes",
                expected: states.len() - 1,
                got: a.len(),
            });
        }
    }
    Ok(())
}

/// Transition records for consecutive states, without gaps.
///
/// `alphas[i]` is the dual step from state `i` to `i + 1`; when absent it is
/// recovered from the multipliers.
pub fn step_records(
    problem: &Problem,
    states: &[IterateState],
    alphas: Option<&[f64]>,
    rho: f64,
) -> Result<Vec<GapRecord>> {
    check_states(problem, states, alphas)?;
    let out = (0..states.len() - 1)
        .into_par_iter()
        .map(|i| {
            let (cur, next) = (&states[i], &states[i + 1]);
            let res = problem.residual(&cur.x);
            let (l_cur_prev_y, alpha_prev) = if i == 0 {
                (None, None)
            } else {
                let prev = &states[i - 1];
                let a = match alphas {
                    Some(a) => a[i - 1],
                    None => infer_alpha(&prev.y, &cur.y, &res),
                };
                (Some(lagrangian_unchecked(problem, &cur.x, &prev.y, rho)), Some(a))
            };
            GapRecord {
                r: cur.r,
                l_cur: lagrangian_unchecked(problem, &cur.x, &cur.y, rho),
                l_next: lagrangian_unchecked(problem, &next.x, &cur.y, rho),
                l_cur_prev_y,
                alpha_prev,
                step: (&next.x - &cur.x).norm(),
                pg: proximal_gradient_unchecked(problem, &cur.x, &cur.y, rho).norm(),
                res,
                res_next: problem.residual(&next.x),
                y: cur.y.clone(),
                f_next: problem.objective_unchecked(&next.x),
                gaps: None,
            }
        })
        .collect();
    Ok(out)
}

/// Transition records with `Δ_p^r = L(x^{r+1};y^r) − d(y^r)` and
/// `Δ_d^r = d* − d(y^r)`, each `d(y^r)` computed to inner accuracy `tol`.
pub fn compute_gaps(
    problem: &Problem,
    states: &[IterateState],
    alphas: Option<&[f64]>,
    reference: &Reference,
    rho: f64,
    tol: f64,
) -> Result<Vec<GapRecord>> {
    let mut records = step_records(problem, states, alphas, rho)?;
    let solver = BlockSolver::new(problem, rho);
    let gaps: Vec<Result<RecordGaps>> = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let inner = minimize_lagrangian_with(&solver, &rec.y, tol, Some(&states[i + 1].x))?;
            Ok(RecordGaps {
                delta_p: rec.l_next - inner.d_value,
                delta_d: reference.d_star - inner.d_value,
                d_y: inner.d_value,
                res_bar: -inner.dual_grad,
            })
        })
        .collect();
    for (rec, g) in records.iter_mut().zip(gaps) {
        rec.gaps = Some(g?);
    }
    Ok(records)
}

/// One verified inequality or identity at one iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckRow {
    pub r: usize,
    pub check_name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

impl CheckRow {
    /// `lhs ≤ rhs + slack`.
    fn le(r: usize, name: &str, lhs: f64, rhs: f64, slack: f64) -> Self {
        CheckRow {
            r,
            check_name: name.to_string(),
            lhs,
            rhs,
            slack,
            pass: lhs <= rhs + slack,
        }
    }

    /// `lhs ≥ rhs − slack`.
    fn ge(r: usize, name: &str, lhs: f64, rhs: f64, slack: f64) -> Self {
        CheckRow {
            pass: lhs >= rhs - slack,
            ..Self::le(r, name, lhs, rhs, slack)
        }
    }

    /// `|lhs − rhs| ≤ slack`.
    fn eq(r: usize, name: &str, lhs: f64, rhs: f64, slack: f64) -> Self {
        CheckRow {
            r,
            check_name: name.to_string(),
            lhs,
            rhs,
            slack,
            pass: (lhs - rhs).abs() <= slack,
        }
    }
}

pub fn write_check_csv<W: std::io::Write>(writer: W, rows: &[CheckRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(["r", "check_name", "lhs", "rhs", "slack", "pass"])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Descent constant guaranteed for one primal sweep of `variant`.
///
/// Each block subproblem is `ρλ_min(E_kᵀE_k)`-strongly convex, so an exact
/// block minimization lowers `L` by at least `½ρλ_min‖Δx_k‖²`. Damped Jacobi
/// gains a factor `K` by convexity; the proximal sweep gives `(β − ν)/2`.
/// Undamped Jacobi has no guarantee and gets 0.
pub fn descent_gamma(problem: &Problem, rho: f64, variant: Variant, beta: f64) -> f64 {
    let gs = 0.5 * rho * problem.min_ete_lambda();
    match variant {
        Variant::GaussSeidel => gs,
        Variant::JacobiUnsafe => 0.0,
        Variant::Proximal => 0.5 * (beta - nu_constant(problem, rho)),
        Variant::Jacobi => gs * problem.num_blocks() as f64,
    }
}

/// The descent constant as usually stated: `ρ·min_k λ_min(E_kᵀE_k)` for
/// Gauss–Seidel (and undamped Jacobi), `K` times that for damped Jacobi.
/// Twice [`descent_gamma`]; pure quadratic blocks attain only the smaller one.
pub fn stated_descent_gamma(problem: &Problem, rho: f64, variant: Variant, beta: f64) -> f64 {
    match variant {
        Variant::Proximal => descent_gamma(problem, rho, variant, beta),
        Variant::JacobiUnsafe => rho * problem.min_ete_lambda(),
        _ => 2.0 * descent_gamma(problem, rho, variant, beta),
    }
}

#[derive(Debug, Clone)]
pub struct DescentCheck {
    pub rows: Vec<CheckRow>,
    /// Smallest observed `(L drop)/step²` over steps with `step² > slack`;
    /// `NaN` when there are none.
    pub min_ratio: f64,
}

/// `L(x^r;y^r) − L(x^{r+1};y^r) ≥ γ‖x^{r+1} − x^r‖²` per record, slack
/// `1e-8·(1 + |L|)`. Zero steps are skipped.
pub fn check_descent_lemma(records: &[GapRecord], gamma: f64) -> DescentCheck {
    let mut rows = Vec::new();
    let mut min_ratio = f64::NAN;
    for rec in records {
        if rec.step == 0.0 {
            continue;
        }
        let drop = rec.l_cur - rec.l_next;
        let s2 = rec.step * rec.step;
        let slack = 1e-8 * (1.0 + rec.l_cur.abs());
        if s2 > slack {
            min_ratio = min_ratio.min(drop / s2);
        }
        rows.push(CheckRow::ge(rec.r, "descent", drop, gamma * s2, slack));
    }
    DescentCheck { rows, min_ratio }
}

/// `L(x^r;y^r) = L(x^r;y^{r−1}) + α‖Ex^r − q‖²` to relative `rel_tol`.
pub fn check_dual_update_identity(records: &[GapRecord], rel_tol: f64) -> Vec<CheckRow> {
    records
        .iter()
        .filter_map(|rec| {
            let (lp, a) = (rec.l_cur_prev_y?, rec.alpha_prev?);
            let rhs = lp + a * rec.res.norm_squared();
            let slack = rel_tol * rec.l_cur.abs().max(rhs.abs()).max(1.0);
            Some(CheckRow::eq(rec.r, "dual_update_identity", rec.l_cur, rhs, slack))
        })
        .collect()
}

/// Gap sign, gap identity, the dual and primal gap decrease inequalities,
/// their combined estimate and monotonicity of `Δ_p + Δ_d`, each with
/// absolute slack `slack`.
pub fn check_gap_decrease(records: &[GapRecord], gamma: f64, d_star: f64, slack: f64) -> Vec<CheckRow> {
    let mut rows = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let Some(g) = &rec.gaps else { continue };
        rows.push(CheckRow::le(rec.r, "primal_gap_nonnegative", -g.delta_p, 0.0, slack));
        rows.push(CheckRow::le(rec.r, "dual_gap_nonnegative", -g.delta_d, 0.0, slack));
        rows.push(CheckRow::eq(
            rec.r,
            "gap_identity",
            g.delta_p - g.delta_d,
            rec.l_next - d_star,
            slack,
        ));
        let (Some(prev), Some(alpha)) = (i.checked_sub(1).map(|j| &records[j]), rec.alpha_prev) else {
            continue;
        };
        let Some(pg) = &prev.gaps else { continue };
        if prev.r + 1 != rec.r {
            continue;
        }
        let cross = alpha * rec.res.dot(&g.res_bar);
        let s2 = rec.step * rec.step;
        rows.push(CheckRow::le(
            rec.r,
            "dual_gap_decrease",
            g.delta_d - pg.delta_d,
            -cross,
            slack,
        ));
        rows.push(CheckRow::le(
            rec.r,
            "primal_gap_decrease",
            g.delta_p - pg.delta_p,
            alpha * rec.res.norm_squared() - gamma * s2 - cross,
            slack,
        ));
        let combined = g.delta_p + g.delta_d;
        let combined_prev = pg.delta_p + pg.delta_d;
        let ex_gap = &rec.res - &g.res_bar;
        rows.push(CheckRow::le(
            rec.r,
            "combined_estimate",
            combined - combined_prev,
            alpha * ex_gap.norm_squared() - alpha * g.res_bar.norm_squared() - gamma * s2,
            2.0 * slack,
        ));
        rows.push(CheckRow::le(rec.r, "combined_monotone", combined, combined_prev, slack));
    }
    rows
}

/// `c = max_k [1 + L_k‖A_k‖² + ρ‖E_k‖·(Σ_{j≤k}‖E_j‖²)^{1/2}]` and the bound
/// `(c + 1)√K` on `‖∇̃L(x^r;y^r)‖/‖x^{r+1} − x^r‖` along Gauss–Seidel runs.
pub fn sigma_constructive(problem: &Problem, rho: f64) -> f64 {
    let mut prefix = 0.0;
    let mut c: f64 = 0.0;
    for info in problem.infos() {
        prefix += info.e_norm * info.e_norm;
        c = c.max(1.0 + info.composed_lipschitz() + rho * info.e_norm * prefix.sqrt());
    }
    (c + 1.0) * (problem.num_blocks() as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct ProxGradCheck {
    pub rows: Vec<CheckRow>,
    pub max_ratio: f64,
}

/// `‖∇̃L(x^r;y^r)‖ ≤ σ‖x^{r+1} − x^r‖` per record; zero steps skipped.
pub fn check_prox_grad_bound(records: &[GapRecord], sigma: f64, slack: f64) -> ProxGradCheck {
    let mut rows = Vec::new();
    let mut max_ratio = f64::NAN;
    for rec in records.iter().filter(|r| r.step > 0.0) {
        max_ratio = max_ratio.max(rec.pg / rec.step);
        rows.push(CheckRow::le(rec.r, "prox_grad_bound", rec.pg, sigma * rec.step, slack));
    }
    ProxGradCheck { rows, max_ratio }
}

/// Least-squares fit of `ln v` against `r`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateFit {
    /// `exp(slope)`
    pub mu: f64,
    pub r2: f64,
    pub points: usize,
    /// Set when the fitted slope is not negative.
    pub no_decrease: bool,
}

/// Fits `ln v_r ≈ a + r·ln μ` over all given points (values must be positive).
pub fn fit_geometric(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 2 {
        return Err(AdmmError::Insufficient(format!("{} points for a rate fit", points.len())));
    }
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(r, v)| (r, v.ln())).collect();
    if logs.iter().any(|(_, l)| !l.is_finite()) {
        return Err(AdmmError::InvalidParameter("rate fit needs positive finite values".into()));
    }
    let mean_r = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_l = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut srr, mut srl, mut sll) = (0.0, 0.0, 0.0);
    for &(r, l) in &logs {
        srr += (r - mean_r) * (r - mean_r);
        srl += (r - mean_r) * (l - mean_l);
        sll += (l - mean_l) * (l - mean_l);
    }
    let slope = srl / srr;
    let r2 = if sll == 0.0 { 1.0 } else { srl * srl / (srr * sll) };
    Ok(RateFit {
        mu: slope.exp(),
        r2,
        points: logs.len(),
        no_decrease: !(slope < 0.0),
    })
}

/// Tail rate of a positive sequence: values at or below `noise_floor` are
/// dropped, then the first `burn_in_fraction` of the rest; at least
/// [`MIN_FIT_POINTS`] must remain.
pub fn tail_rate(series: &[(usize, f64)], burn_in_fraction: f64, noise_floor: f64) -> Result<RateFit> {
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(AdmmError::InvalidParameter(format!(
            "burn-in fraction {burn_in_fraction} outside [0, 1)"
        )));
    }
    let above: Vec<(f64, f64)> = series
        .iter()
        .filter(|(_, v)| v.is_finite() && *v > noise_floor)
        .map(|&(r, v)| (r as f64, v))
        .collect();
    let skip = (above.len() as f64 * burn_in_fraction).floor() as usize;
    let tail = &above[skip..];
    if tail.len() < MIN_FIT_POINTS {
        return Err(AdmmError::Insufficient(format!(
            "{} tail points above the noise floor, need {MIN_FIT_POINTS}",
            tail.len()
        )));
    }
    fit_geometric(tail)
}

/// Smallest nonincreasing majorant of `series`: `max_{s ≥ r} v_s`.
pub fn suffix_max(series: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut out = series.to_vec();
    let mut running = f64::NEG_INFINITY;
    for point in out.iter_mut().rev() {
        running = running.max(point.1);
        point.1 = running;
    }
    out
}

/// Tail fit of the envelope [`suffix_max`]; the right fit for quantities
/// that converge R-linearly but oscillate.
pub fn envelope_rate(series: &[(usize, f64)], burn_in_fraction: f64, noise_floor: f64) -> Result<RateFit> {
    tail_rate(&suffix_max(series), burn_in_fraction, noise_floor)
}

/// Tail fit of the combined gap `Δ_p^r + Δ_d^r` of a trace.
pub fn estimate_rate(records: &[TraceRecord], burn_in_fraction: f64, noise_floor: f64) -> Result<RateFit> {
    let series: Vec<(usize, f64)> = records.iter().map(|t| (t.r, t.combined)).collect();
    tail_rate(&series, burn_in_fraction, noise_floor)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LipschitzCheck {
    pub max_ratio: f64,
    pub pairs_used: usize,
    /// `1/ρ + 10·tol/(smallest pair distance)`.
    pub bound: f64,
}

/// Samples `n_pairs` multiplier pairs uniformly in the ball of `radius`
/// around `center` and returns the largest `‖∇d(y′) − ∇d(y)‖/‖y′ − y‖`.
pub fn check_dual_lipschitz(
    problem: &Problem,
    rho: f64,
    n_pairs: usize,
    center: &DVector<f64>,
    radius: f64,
    tol: f64,
    seed: u64,
) -> Result<LipschitzCheck> {
    problem.check_multiplier(center)?;
    if !(rho > 0.0) || !(radius > 0.0) {
        return Err(AdmmError::InvalidParameter("rho and radius must be positive".into()));
    }
    let m = problem.m();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = || {
        let dir = DVector::<f64>::from_fn(m, |_, _| rng.sample(StandardNormal));
        let len = radius * rng.random::<f64>().powf(1.0 / m as f64);
        center + dir.normalize() * len
    };
    let pairs: Vec<(DVector<f64>, DVector<f64>)> = (0..n_pairs).map(|_| (sample(), sample())).collect();
    let solver = BlockSolver::new(problem, rho);
    let results: Vec<Result<Option<(f64, f64)>>> = pairs
        .par_iter()
        .map(|(a, b)| {
            let dist = (a - b).norm();
            if dist == 0.0 {
                return Ok(None);
            }
            let ga = minimize_lagrangian_with(&solver, a, tol, None)?.dual_grad;
            let gb = minimize_lagrangian_with(&solver, b, tol, None)?.dual_grad;
            Ok(Some(((ga - gb).norm() / dist, dist)))
        })
        .collect();
    let mut max_ratio: f64 = 0.0;
    let mut min_dist = f64::INFINITY;
    let mut used = 0;
    for res in results {
        if let Some((ratio, dist)) = res? {
            max_ratio = max_ratio.max(ratio);
            min_dist = min_dist.min(dist);
            used += 1;
        }
    }
    Ok(LipschitzCheck {
        max_ratio,
        pairs_used: used,
        bound: 1.0 / rho + 10.0 * tol / min_dist,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ErrorBoundEstimates {
    /// `max ‖x − x(y)‖ / ‖∇̃L(x;y)‖`
    pub tau_primal_emp: f64,
    /// `max ‖y − y*‖ / ‖∇d(y)‖`
    pub tau_dual_emp: f64,
    /// Set when the multiplier set may not be a singleton (`E` lacks full row
    /// rank); `tau_dual_emp` then only bounds the true constant from above.
    pub tau_dual_upper_bound_only: bool,
    pub primal_samples: usize,
    pub dual_samples: usize,
}

/// Empirical error-bound constants over `(x, y)` samples. Samples whose
/// residual is at or below `noise_floor` are skipped.
pub fn estimate_error_bound_constants(
    problem: &Problem,
    rho: f64,
    reference: &Reference,
    samples: &[(DVector<f64>, DVector<f64>)],
    tol: f64,
    noise_floor: f64,
) -> Result<ErrorBoundEstimates> {
    let solver = BlockSolver::new(problem, rho);
    let ratios: Vec<Result<(Option<f64>, Option<f64>)>> = samples
        .par_iter()
        .map(|(x, y)| {
            problem.check_conformal(x)?;
            problem.check_multiplier(y)?;
            let inner = minimize_lagrangian_with(&solver, y, tol, Some(x))?;
            let pg = proximal_gradient_unchecked(problem, x, y, rho).norm();
            let primal = (pg > noise_floor).then(|| (x - &inner.x_of_y).norm() / pg);
            let dg = inner.dual_grad.norm();
            let dual = (dg > noise_floor).then(|| (y - &reference.y_star).norm() / dg);
            Ok((primal, dual))
        })
        .collect();
    let (mut tp, mut td, mut np, mut nd) = (0.0f64, 0.0f64, 0, 0);
    for r in ratios {
        let (p, d) = r?;
        if let Some(p) = p {
            tp = tp.max(p);
            np += 1;
        }
        if let Some(d) = d {
            td = td.max(d);
            nd += 1;
        }
    }
    let eet = problem.e() * problem.e().transpose();
    let (lmin, lmax) = symmetric_extremes(&eet);
    Ok(ErrorBoundEstimates {
        tau_primal_emp: tp,
        tau_dual_emp: td,
        tau_dual_upper_bound_only: !(lmin > 1e-10 * lmax),
        primal_samples: np,
        dual_samples: nd,
    })
}

/// `γτ⁻²σ⁻²‖E‖⁻²` from empirical surrogates; an estimate, not a certificate.
pub fn alpha_bound_estimate(gamma: f64, sigma: f64, tau: f64, norm_e: f64) -> Result<f64> {
    for (name, v) in [("gamma", gamma), ("sigma", sigma), ("tau", tau), ("norm_e", norm_e)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(AdmmError::InvalidParameter(format!("{name} = {v} must be positive")));
        }
    }
    Ok(gamma / (tau * tau * sigma * sigma * norm_e * norm_e))
}

#[derive(Debug, Clone)]
pub struct FunctionValueCheck {
    pub rows: Vec<CheckRow>,
    /// Envelope fit of `|f(x^{r+1}) − d*|`; `None` with too few points.
    pub fit: Option<RateFit>,
    /// Fit of the raw series.
    pub raw_fit: Option<RateFit>,
}

/// `f(x^{r+1}) − d* = Δ_p − Δ_d − ⟨y^r, q − Ex^{r+1}⟩ − ρ/2‖Ex^{r+1} − q‖²`
/// per record to relative `rel_tol`, plus the geometric fit of `|f − d*|`.
pub fn check_function_value_convergence(
    records: &[GapRecord],
    reference: &Reference,
    rho: f64,
    rel_tol: f64,
    noise_floor: f64,
) -> FunctionValueCheck {
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for rec in records {
        let Some(g) = &rec.gaps else { continue };
        let lhs = rec.f_next - reference.d_star;
        let rhs = g.delta_p - g.delta_d + rec.y.dot(&rec.res_next) - 0.5 * rho * rec.res_next.norm_squared();
        let scale = rec.f_next.abs() + reference.d_star.abs() + g.delta_p.abs() + g.delta_d.abs();
        rows.push(CheckRow::eq(rec.r, "function_value_identity", lhs, rhs, rel_tol * scale.max(1.0)));
        series.push((rec.r + 1, lhs.abs()));
    }
    FunctionValueCheck {
        rows,
        fit: envelope_rate(&series, DEFAULT_BURN_IN, noise_floor).ok(),
        raw_fit: tail_rate(&series, DEFAULT_BURN_IN, noise_floor).ok(),
    }
}

/// Summary of all checks over one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub variant: Variant,
    pub iterations: usize,
    pub d_star: f64,
    pub f_star: f64,
    pub tol_ref: f64,
    /// Descent constant the checks were run against.
    pub gamma_formula: f64,
    /// The commonly stated constant, see [`stated_descent_gamma`].
    pub gamma_stated: f64,
    /// Smallest observed `(L drop)/step²`.
    pub gamma_observed: f64,
    /// Largest observed `‖∇̃L‖/step`.
    pub sigma_emp: f64,
    /// Constructive bound `(c + 1)√K`.
    pub sigma_bound: f64,
    pub lipschitz_ratio_max: Option<f64>,
    pub rate_mu: Option<f64>,
    pub fit_r2: Option<f64>,
    /// Envelope fit of `‖Ex^r − q‖`.
    pub feas_rate_mu: Option<f64>,
    pub feas_fit_r2: Option<f64>,
    pub feas_raw_fit_r2: Option<f64>,
    /// Envelope fit of `|f(x^r) − d*|`.
    pub fval_rate_mu: Option<f64>,
    pub fval_fit_r2: Option<f64>,
    pub fval_raw_fit_r2: Option<f64>,
    pub tau_primal_emp: Option<f64>,
    pub tau_dual_emp: Option<f64>,
    pub tau_dual_upper_bound_only: bool,
    pub monotone_combined: bool,
    /// ESTIMATE of the admissible dual step from empirical surrogates.
    pub alpha_bound_estimate: Option<f64>,
    /// Existential constants with no computable surrogate.
    pub not_estimated: Vec<String>,
    /// Failed rows per check name.
    pub violations: std::collections::BTreeMap<String, usize>,
}

impl DiagnosticsReport {
    pub fn total_violations(&self) -> usize {
        self.violations.values().sum()
    }
}

#[derive(Debug, Clone)]
pub struct DiagnoseOptions {
    pub tol_ref: f64,
    /// Inner accuracy for `d(y^r)`.
    pub inner_tol: f64,
    pub lipschitz_pairs: usize,
    pub error_bound_samples: usize,
    pub seed: u64,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions {
            tol_ref: DEFAULT_REF_TOL,
            inner_tol: 0.1 * DEFAULT_REF_TOL,
            lipschitz_pairs: 20,
            error_bound_samples: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Diagnosis {
    pub report: DiagnosticsReport,
    pub rows: Vec<CheckRow>,
    pub records: Vec<GapRecord>,
    pub reference: Reference,
}

/// Runs every check over the iterates of one run.
///
/// `beta` is the proximal weight (ignored by the other variants).
#[allow(clippy::too_many_arguments)]
pub fn diagnose(
    problem: &Problem,
    states: &[IterateState],
    alphas: Option<&[f64]>,
    variant: Variant,
    rho: f64,
    beta: f64,
    reference: Option<Reference>,
    options: &DiagnoseOptions,
) -> Result<Diagnosis> {
    let reference = match reference {
        Some(r) => r,
        None => reference_solution(problem, rho, options.tol_ref)?,
    };
    let slack = 10.0 * reference.tol_ref;
    let floor = 100.0 * reference.tol_ref;
    let records = compute_gaps(problem, states, alphas, &reference, rho, options.inner_tol)?;
    let gamma = descent_gamma(problem, rho, variant, beta);
    let mut rows = Vec::new();

    let descent = check_descent_lemma(&records, gamma);
    rows.extend(descent.rows);
    rows.extend(check_dual_update_identity(&records, 1e-10));
    let gap_rows = check_gap_decrease(&records, gamma, reference.d_star, slack);
    let monotone_combined = gap_rows
        .iter()
        .filter(|r| r.check_name == "combined_monotone")
        .all(|r| r.pass);
    rows.extend(gap_rows);
    let sigma_bound = sigma_constructive(problem, rho);
    let pg = check_prox_grad_bound(&records, sigma_bound, 10.0 * options.inner_tol);
    if variant == Variant::GaussSeidel {
        rows.extend(pg.rows);
    }
    let fval = check_function_value_convergence(&records, &reference, rho, 1e-9, floor);
    rows.extend(fval.rows);

    let trace: Vec<TraceRecord> = records.iter().map(GapRecord::trace_record).collect();
    let rate = estimate_rate(&trace, DEFAULT_BURN_IN, floor).ok();
    let feas_series: Vec<(usize, f64)> = trace.iter().map(|t| (t.r, t.feas)).collect();
    let feas_rate = envelope_rate(&feas_series, DEFAULT_BURN_IN, floor).ok();
    let feas_raw = tail_rate(&feas_series, DEFAULT_BURN_IN, floor).ok();

    let lipschitz = if options.lipschitz_pairs > 0 {
        let radius = states
            .iter()
            .map(|s| (&s.y - &reference.y_star).norm())
            .fold(0.0, f64::max)
            .max(1.0);
        Some(check_dual_lipschitz(
            problem,
            rho,
            options.lipschitz_pairs,
            &reference.y_star,
            radius,
            options.inner_tol,
            options.seed,
        )?)
    } else {
        None
    };

    let samples: Vec<(DVector<f64>, DVector<f64>)> = match states.len().checked_div(options.error_bound_samples) {
        Some(stride) => states.iter().step_by(stride.max(1)).map(|s| (s.x.clone(), s.y.clone())).collect(),
        None => Vec::new(),
    };
    let eb = if samples.is_empty() {
        None
    } else {
        Some(estimate_error_bound_constants(
            problem,
            rho,
            &reference,
            &samples,
            options.inner_tol,
            floor,
        )?)
    };
    let tau_primal = eb.map(|e| e.tau_primal_emp).filter(|&t| t > 0.0);
    let sigma_emp = pg.max_ratio;
    let alpha_bound = tau_primal.and_then(|tau| alpha_bound_estimate(gamma, sigma_emp, tau, problem.e_norm()).ok());

    let mut violations = std::collections::BTreeMap::new();
    for row in rows.iter().filter(|r| !r.pass) {
        *violations.entry(row.check_name.clone()).or_insert(0) += 1;
    }
    let report = DiagnosticsReport {
        variant,
        iterations: states.last().map_or(0, |s| s.r),
        d_star: reference.d_star,
        f_star: reference.f_star,
        tol_ref: reference.tol_ref,
        gamma_formula: gamma,
        gamma_stated: stated_descent_gamma(problem, rho, variant, beta),
        gamma_observed: descent.min_ratio,
        sigma_emp,
        sigma_bound,
        lipschitz_ratio_max: lipschitz.map(|l| l.max_ratio),
        rate_mu: rate.map(|f| f.mu),
        fit_r2: rate.map(|f| f.r2),
        feas_rate_mu: feas_rate.map(|f| f.mu),
        feas_fit_r2: feas_rate.map(|f| f.r2),
        feas_raw_fit_r2: feas_raw.map(|f| f.r2),
        fval_rate_mu: fval.fit.map(|f| f.mu),
        fval_fit_r2: fval.fit.map(|f| f.r2),
        fval_raw_fit_r2: fval.raw_fit.map(|f| f.r2),
        tau_primal_emp: tau_primal,
        tau_dual_emp: eb.map(|e| e.tau_dual_emp),
        tau_dual_upper_bound_only: eb.is_some_and(|e| e.tau_dual_upper_bound_only),
        monotone_combined,
        alpha_bound_estimate: alpha_bound,
        not_estimated: ["zeta", "zeta_prime", "delta"].map(String::from).to_vec(),
        violations,
    };
    Ok(Diagnosis {
        report,
        rows,
        records,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::gen_l1_kblock;
    use crate::problem::{build_problem, Block, SmoothTerm};
    use crate::prox::ProxTerm;
    use crate::solvers::{run, SolverConfig};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    /// f ≡ 0, E = I, q = 0, so ∇d(y) = −y/ρ.
    fn identity_problem(m: usize) -> Problem {
        build_problem(vec![Block::new(DMatrix::identity(m, m))], DVector::zeros(m)).unwrap()
    }

    fn states_of(problem: &Problem, alpha: f64, iters: usize) -> (Vec<IterateState>, Vec<f64>) {
        let cfg = SolverConfig {
            keep_states: true,
            max_iters: iters,
            ..SolverConfig::default().with_alpha(alpha)
        };
        let res = run(problem, &cfg, None).unwrap();
        (res.states.unwrap(), res.alphas)
    }

    #[test]
    fn reference_of_trivial_problem_is_zero() {
        let r = reference_solution(&identity_problem(3), 1.0, 1e-10).unwrap();
        assert_eq!(r.x_star.norm(), 0.0);
        assert_eq!(r.y_star.norm(), 0.0);
        assert_eq!(r.d_star, 0.0);
    }

    #[test]
    fn reference_value_independent_of_start() {
        let p = gen_l1_kblock(6, 10, -1.0, 1.0, 5).unwrap();
        let a = reference_solution(&p, 1.0, 1e-10).unwrap();
        let y0 = DVector::from_fn(6, |i, _| 3.0 * (i as f64).cos());
        let b = reference_solution_from(&p, 1.0, 1e-10, &y0).unwrap();
        assert!((a.d_star - b.d_star).abs() <= 10.0 * 1e-10);
    }

    #[test]
    fn scalar_lasso_reference_matches_grid() {
        // ½(x − b)² + λ|u| with x − u = 0.
        let (b, lambda) = (0.8, 0.3);
        let p = build_problem(
            vec![
                Block::new(DMatrix::from_element(1, 1, 1.0)).with_smooth(SmoothTerm::quadratic(DVector::from_element(1, b))),
                Block::new(DMatrix::from_element(1, 1, -1.0)).with_nonsmooth(ProxTerm::l1(lambda)),
            ],
            DVector::zeros(1),
        )
        .unwrap();
        let r = reference_solution(&p, 1.0, 1e-10).unwrap();
        let objective = |x: f64| 0.5 * (x - b) * (x - b) + lambda * x.abs();
        let grid_best = (0..=200_000)
            .map(|i| -1.0 + 1e-5 * i as f64)
            .min_by(|u, v| objective(*u).total_cmp(&objective(*v)))
            .unwrap();
        assert!((r.x_star[0] - grid_best).abs() <= 1e-4);
        assert!((r.x_star[1] - grid_best).abs() <= 1e-4);
        assert!((r.f_star - objective(grid_best)).abs() <= 1e-8);
    }

    #[test]
    fn gaps_vanish_at_optimum() {
        let p = gen_l1_kblock(6, 10, -1.0, 1.0, 1).unwrap();
        let reference = reference_solution(&p, 1.0, 1e-10).unwrap();
        let opt = IterateState {
            x: reference.x_star.clone(),
            y: reference.y_star.clone(),
            r: 0,
        };
        let states = vec![opt.clone(), IterateState { r: 1, ..opt }];
        let recs = compute_gaps(&p, &states, Some(&[0.1]), &reference, 1.0, 1e-11).unwrap();
        let g = recs[0].gaps.as_ref().unwrap();
        assert!(g.delta_p.abs() <= 10.0 * reference.tol_ref);
        assert!(g.delta_d.abs() <= 10.0 * reference.tol_ref);
        let fv = check_function_value_convergence(&recs, &reference, 1.0, 1e-9, 1e-8);
        assert!(fv.rows.iter().all(|r| r.pass));
    }

    #[test]
    fn gap_identity_and_signs_on_a_run() {
        let p = gen_l1_kblock(8, 12, -1.0, 1.0, 2).unwrap();
        let (states, alphas) = states_of(&p, 0.05, 60);
        let reference = reference_solution(&p, 1.0, 1e-10).unwrap();
        let recs = compute_gaps(&p, &states, Some(&alphas), &reference, 1.0, 1e-11).unwrap();
        let slack = 10.0 * reference.tol_ref;
        for rec in &recs {
            let g = rec.gaps.as_ref().unwrap();
            assert!(g.delta_p >= -slack && g.delta_d >= -slack);
            let lhs = g.delta_p - g.delta_d;
            assert!((lhs - (rec.l_next - reference.d_star)).abs() <= 1e-9 * (1.0 + rec.l_next.abs()));
        }
    }

    #[test]
    fn quadratic_block_attains_half_modulus() {
        // L(x) = ⟨y, q − 2x⟩ + ρ/2(q − 2x)²: one exact step lowers L by exactly
        // ½·4ρ·Δx², half the strong convexity modulus.
        let p = build_problem(vec![Block::new(DMatrix::from_element(1, 1, 2.0))], DVector::from_element(1, 1.0)).unwrap();
        let (states, alphas) = states_of(&p, 0.5, 3);
        let recs = step_records(&p, &states, Some(&alphas), 1.0).unwrap();
        let gamma = descent_gamma(&p, 1.0, Variant::GaussSeidel, 0.0);
        assert_relative_eq!(gamma, 2.0);
        let check = check_descent_lemma(&recs, gamma);
        assert_relative_eq!(check.min_ratio, gamma, max_relative = 1e-10);
        assert!(check.rows.iter().all(|r| r.pass));
        assert!(!check_descent_lemma(&recs, stated_descent_gamma(&p, 1.0, Variant::GaussSeidel, 0.0))
            .rows
            .iter()
            .all(|r| r.pass));
    }

    #[test]
    fn zero_steps_are_skipped() {
        let p = identity_problem(2);
        let s = IterateState::initial(&p);
        let states = vec![s.clone(), IterateState { r: 1, ..s }];
        let recs = step_records(&p, &states, None, 1.0).unwrap();
        let check = check_descent_lemma(&recs, 1.0);
        assert!(check.rows.is_empty());
        assert!(check.min_ratio.is_nan());
    }

    #[test]
    fn geometric_fit_exact_and_constant() {
        let series: Vec<(usize, f64)> = (0..50).map(|r| (r, 3.0 * 0.9f64.powi(r as i32))).collect();
        let fit = tail_rate(&series, 0.0, 0.0).unwrap();
        assert_relative_eq!(fit.mu, 0.9, epsilon = 1e-12);
        assert_relative_eq!(fit.r2, 1.0, epsilon = 1e-12);
        assert!(!fit.no_decrease);
        let flat: Vec<(usize, f64)> = (0..50).map(|r| (r, 2.0)).collect();
        let fit = tail_rate(&flat, 0.4, 0.0).unwrap();
        assert_eq!(fit.mu, 1.0);
        assert!(fit.no_decrease);
        assert!(tail_rate(&series[..10], 0.0, 0.0).is_err());
    }

    #[test]
    fn envelope_is_nonincreasing_majorant() {
        let series = vec![(0, 1.0), (1, 3.0), (2, 0.5), (3, 2.0), (4, 0.1)];
        let env = suffix_max(&series);
        let values: Vec<f64> = env.iter().map(|p| p.1).collect();
        assert_eq!(values, [3.0, 3.0, 2.0, 2.0, 0.1]);
    }

    #[test]
    fn dual_lipschitz_is_tight_for_identity() {
        let p = identity_problem(4);
        for rho in [0.5, 1.0, 2.0] {
            let check = check_dual_lipschitz(&p, rho, 30, &DVector::zeros(4), 2.0, 1e-13, 7).unwrap();
            assert_eq!(check.pairs_used, 30);
            assert!((check.max_ratio - 1.0 / rho).abs() <= 1e-8);
        }
    }

    #[test]
    fn alpha_bound_examples() {
        assert_eq!(alpha_bound_estimate(1.0, 1.0, 1.0, 1.0).unwrap(), 1.0);
        let a = alpha_bound_estimate(0.3, 2.0, 1.5, 4.0).unwrap();
        let b = alpha_bound_estimate(0.3, 2.0, 3.0, 4.0).unwrap();
        assert_relative_eq!(a / b, 4.0, epsilon = 1e-12);
        assert!(alpha_bound_estimate(0.0, 1.0, 1.0, 1.0).is_err());
    }
}
