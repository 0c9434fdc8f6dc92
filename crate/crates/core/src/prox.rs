//! Nonsmooth terms `h` and their exact proximity operators.
//!
//! `prox(h, v, t)` returns the unique minimizer of `t·h(u) + ½‖v − u‖²`.
//! Every supported term (and every accepted sum of terms) is an instance of
//!
//! ```text
//! h(u) = ⟨b, u⟩ + λ‖u‖₁ + Σ_J w_J ‖u_J‖₂ + indicator(lo ≤ u ≤ hi)
//! ```
//!
//! with some pieces absent, so a single routine covers all of them.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{AdmmError, Result};

/// Absolute slack (scaled by the bound magnitude) when testing box membership.
pub const BOX_TOL: f64 = 1e-12;

/// Nonsmooth component of a block objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProxTerm {
    Zero,
    L1 {
        lambda: f64,
    },
    GroupL2 {
        groups: Vec<Vec<usize>>,
        weights: Vec<f64>,
    },
    /// `λ‖x‖₁ + Σ_J w_J‖x_J‖₂`
    SparseGroup {
        lambda: f64,
        groups: Vec<Vec<usize>>,
        weights: Vec<f64>,
    },
    #[serde(rename = "box")]
    BoxIndicator {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    #[serde(rename = "nonneg")]
    NonnegIndicator,
    Linear {
        b: Vec<f64>,
    },
    Sum {
        terms: Vec<ProxTerm>,
    },
}

#[derive(Debug, Clone, Copy)]
enum Bounds<'a> {
    Box(&'a [f64], &'a [f64]),
    Nonneg,
}

impl Bounds<'_> {
    fn lo(&self, i: usize) -> f64 {
        match self {
            Bounds::Box(lo, _) => lo[i],
            Bounds::Nonneg => 0.0,
        }
    }

    fn hi(&self, i: usize) -> f64 {
        match self {
            Bounds::Box(_, hi) => hi[i],
            Bounds::Nonneg => f64::INFINITY,
        }
    }

    fn clamp(&self, i: usize, x: f64) -> f64 {
        x.max(self.lo(i)).min(self.hi(i))
    }

    fn contains_zero(&self) -> bool {
        match self {
            Bounds::Box(lo, hi) => lo.iter().zip(hi.iter()).all(|(&l, &h)| l <= 0.0 && 0.0 <= h),
            Bounds::Nonneg => true,
        }
    }
}

/// Flattened view of a validated term.
#[derive(Debug, Clone, Copy, Default)]
struct Parts<'a> {
    l1: f64,
    groups: Option<(&'a [Vec<usize>], &'a [f64])>,
    bounds: Option<Bounds<'a>>,
    linear: Option<&'a [f64]>,
}

impl<'a> Parts<'a> {
    fn absorb(&mut self, term: &'a ProxTerm) {
        match term {
            ProxTerm::Zero => {}
            ProxTerm::L1 { lambda } => self.l1 += lambda,
            ProxTerm::GroupL2 { groups, weights } => self.groups = Some((groups, weights)),
            ProxTerm::SparseGroup {
                lambda,
                groups,
                weights,
            } => {
                self.l1 += lambda;
                self.groups = Some((groups, weights));
            }
            ProxTerm::BoxIndicator { lo, hi } => self.bounds = Some(Bounds::Box(lo, hi)),
            ProxTerm::NonnegIndicator => self.bounds = Some(Bounds::Nonneg),
            ProxTerm::Linear { b } => self.linear = Some(b),
            ProxTerm::Sum { terms } => terms.iter().for_each(|t| self.absorb(t)),
        }
    }
}

fn soft(x: f64, kappa: f64) -> f64 {
    if x > kappa {
        x - kappa
    } else if x < -kappa {
        x + kappa
    } else {
        0.0
    }
}

impl ProxTerm {
    pub fn l1(lambda: f64) -> Self {
        ProxTerm::L1 { lambda }
    }

    /// A single group covering all `n` coordinates.
    pub fn group_l2_single(n: usize, weight: f64) -> Self {
        ProxTerm::GroupL2 {
            groups: vec![(0..n).collect()],
            weights: vec![weight],
        }
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        ProxTerm::BoxIndicator { lo, hi }
    }

    pub fn sum(terms: Vec<ProxTerm>) -> Self {
        ProxTerm::Sum { terms }
    }

    /// Returns this term with a box indicator added, following the closure rules.
    pub fn with_box(self, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        let bx = ProxTerm::BoxIndicator { lo, hi };
        match self {
            ProxTerm::Zero => bx,
            ProxTerm::Sum { mut terms } => {
                terms.push(bx);
                ProxTerm::Sum { terms }
            }
            other => ProxTerm::Sum {
                terms: vec![other, bx],
            },
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            ProxTerm::Zero => "zero",
            ProxTerm::L1 { .. } => "l1",
            ProxTerm::GroupL2 { .. } => "group_l2",
            ProxTerm::SparseGroup { .. } => "sparse_group",
            ProxTerm::BoxIndicator { .. } => "box",
            ProxTerm::NonnegIndicator => "nonneg",
            ProxTerm::Linear { .. } => "linear",
            ProxTerm::Sum { .. } => "sum",
        }
    }

    /// Checks parameters and the sum closure rules for a block of dimension `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            ProxTerm::Zero | ProxTerm::NonnegIndicator => Ok(()),
            ProxTerm::L1 { lambda } => check_nonneg("lambda", *lambda),
            ProxTerm::GroupL2 { groups, weights } => validate_groups(groups, weights, n),
            ProxTerm::SparseGroup {
                lambda,
                groups,
                weights,
            } => {
                check_nonneg("lambda", *lambda)?;
                validate_groups(groups, weights, n)
            }
            ProxTerm::BoxIndicator { lo, hi } => {
                if lo.len() != n || hi.len() != n {
                    return Err(AdmmError::InvalidTerm(format!(
                        "box bounds have lengths {}/{} for a block of dimension {n}",
                        lo.len(),
                        hi.len()
                    )));
                }
                for (i, (l, h)) in lo.iter().zip(hi.iter()).enumerate() {
                    if l.is_nan() || h.is_nan() || l > h {
                        return Err(AdmmError::InvalidTerm(format!(
                            "box coordinate {i}: lo {l} > hi {h}"
                        )));
                    }
                }
                Ok(())
            }
            ProxTerm::Linear { b } => {
                if b.len() != n {
                    return Err(AdmmError::InvalidTerm(format!(
                        "linear term has length {} for a block of dimension {n}",
                        b.len()
                    )));
                }
                if b.iter().any(|x| !x.is_finite()) {
                    return Err(AdmmError::InvalidTerm("linear term is not finite".into()));
                }
                Ok(())
            }
            ProxTerm::Sum { terms } => {
                for t in terms {
                    if matches!(t, ProxTerm::Sum { .. }) {
                        return Err(AdmmError::InvalidTerm("nested sums are not supported".into()));
                    }
                    t.validate(n)?;
                }
                let linear = terms
                    .iter()
                    .filter(|t| matches!(t, ProxTerm::Linear { .. }))
                    .count();
                if linear > 1 {
                    return Err(AdmmError::InvalidTerm("at most one linear term per sum".into()));
                }
                let rest: Vec<&ProxTerm> = terms
                    .iter()
                    .filter(|t| !matches!(t, ProxTerm::Linear { .. } | ProxTerm::Zero))
                    .collect();
                let is_bound =
                    |t: &ProxTerm| matches!(t, ProxTerm::BoxIndicator { .. } | ProxTerm::NonnegIndicator);
                let ok = match rest.as_slice() {
                    [] | [_] => true,
                    [a, b] => {
                        let (bound, other) = if is_bound(a) {
                            (*a, *b)
                        } else {
                            (*b, *a)
                        };
                        is_bound(bound)
                            && match other {
                                ProxTerm::L1 { .. } => true,
                                ProxTerm::GroupL2 { .. } | ProxTerm::SparseGroup { .. } => {
                                    let mut p = Parts::default();
                                    p.absorb(bound);
                                    p.bounds.is_some_and(|b| b.contains_zero())
                                }
                                _ => false,
                            }
                    }
                    _ => false,
                };
                if ok {
                    Ok(())
                } else {
                    let names: Vec<&str> = terms.iter().map(|t| t.kind_name()).collect();
                    Err(AdmmError::InvalidTerm(format!(
                        "unsupported sum combination [{}]",
                        names.join(", ")
                    )))
                }
            }
        }
    }

    fn parts(&self) -> Parts<'_> {
        let mut p = Parts::default();
        p.absorb(self);
        p
    }

    /// True when the term contains an indicator with compact (finite) bounds.
    pub fn has_compact_box(&self) -> bool {
        match self.parts().bounds {
            Some(Bounds::Box(lo, hi)) => lo.iter().chain(hi.iter()).all(|x| x.is_finite()),
            _ => false,
        }
    }

    /// True when the term contains any indicator.
    pub fn has_indicator(&self) -> bool {
        self.parts().bounds.is_some()
    }

    /// True when the prox acts coordinatewise (no group structure).
    pub fn is_separable(&self) -> bool {
        self.parts().groups.is_none()
    }

    /// True when `h` is zero or linear, i.e. the prox is a translation.
    pub fn is_affine(&self) -> bool {
        let p = self.parts();
        p.l1 == 0.0 && p.groups.is_none() && p.bounds.is_none()
    }

    pub(crate) fn l1_weight(&self) -> f64 {
        self.parts().l1
    }

    /// Groups and their weights, when the term has a group norm.
    pub(crate) fn group_structure(&self) -> Option<(&[Vec<usize>], &[f64])> {
        self.parts().groups
    }

    pub(crate) fn linear_coefficient(&self, i: usize) -> Option<f64> {
        self.parts().linear.map(|b| b[i])
    }

    pub(crate) fn on_box_boundary(&self, i: usize, x: f64) -> bool {
        match self.parts().bounds {
            Some(b) => x == b.lo(i) || x == b.hi(i),
            None => false,
        }
    }

    /// `h(u)`; `f64::INFINITY` outside the indicator's domain.
    pub fn value(&self, u: &DVector<f64>) -> f64 {
        let p = self.parts();
        if let Some(bounds) = p.bounds {
            for (i, &x) in u.iter().enumerate() {
                let lo = bounds.lo(i);
                let hi = bounds.hi(i);
                if x < lo - BOX_TOL * lo.abs().max(1.0) || x > hi + BOX_TOL * hi.abs().max(1.0) {
                    return f64::INFINITY;
                }
            }
        }
        let mut total = 0.0;
        if p.l1 != 0.0 {
            total += p.l1 * u.iter().map(|x| x.abs()).sum::<f64>();
        }
        if let Some((groups, weights)) = p.groups {
            for (g, &w) in groups.iter().zip(weights.iter()) {
                if w != 0.0 {
                    total += w * g.iter().map(|&i| u[i] * u[i]).sum::<f64>().sqrt();
                }
            }
        }
        if let Some(b) = p.linear {
            total += b.iter().zip(u.iter()).map(|(b, x)| b * x).sum::<f64>();
        }
        total
    }

    /// Coordinate `i` of `project_box`.
    pub(crate) fn clamp_coordinate(&self, i: usize, x: f64) -> f64 {
        match self.parts().bounds {
            Some(b) => b.clamp(i, x),
            None => x,
        }
    }

    /// Projects `u` into the term's box (identity when there is none).
    pub fn project_box(&self, u: &DVector<f64>) -> DVector<f64> {
        match self.parts().bounds {
            Some(b) => DVector::from_fn(u.len(), |i, _| b.clamp(i, u[i])),
            None => u.clone(),
        }
    }

    /// Unique minimizer of `t·h(u) + ½‖v − u‖²`.
    pub fn prox(&self, v: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(AdmmError::InvalidParameter(format!("prox step t = {t} must be positive")));
        }
        self.check_conformal(v.len())?;
        Ok(self.prox_unchecked(v, t))
    }

    fn check_conformal(&self, n: usize) -> Result<()> {
        let p = self.parts();
        let fixed = match p.bounds {
            Some(Bounds::Box(lo, _)) => Some(lo.len()),
            _ => None,
        }
        .or(p.linear.map(|b| b.len()));
        if let Some(expected) = fixed {
            if expected != n {
                return Err(AdmmError::Dimension {
                    what: "prox argument",
                    expected,
                    got: n,
                });
            }
        }
        if let Some((groups, _)) = p.groups {
            let covered: usize = groups.iter().map(|g| g.len()).sum();
            if covered != n {
                return Err(AdmmError::Dimension {
                    what: "prox argument (group cover)",
                    expected: covered,
                    got: n,
                });
            }
        }
        Ok(())
    }

    pub(crate) fn prox_unchecked(&self, v: &DVector<f64>, t: f64) -> DVector<f64> {
        let p = self.parts();
        let mut w = v.clone();
        if let Some(b) = p.linear {
            for (wi, bi) in w.iter_mut().zip(b.iter()) {
                *wi -= t * bi;
            }
        }
        match (p.groups, p.bounds) {
            (None, bounds) => {
                for (i, wi) in w.iter_mut().enumerate() {
                    let s = soft(*wi, t * p.l1);
                    *wi = match bounds {
                        Some(b) => b.clamp(i, s),
                        None => s,
                    };
                }
                w
            }
            (Some((groups, weights)), None) => {
                sparse_group_in_place(&mut w, t * p.l1, groups, weights, t);
                w
            }
            (Some((groups, weights)), Some(bounds)) => {
                let mut out = DVector::zeros(w.len());
                for (g, &weight) in groups.iter().zip(weights.iter()) {
                    let shrunk: Vec<f64> = g.iter().map(|&i| soft(w[i], t * p.l1)).collect();
                    let u = boxed_group_shrink(&shrunk, g, t * weight, bounds);
                    for (&i, ui) in g.iter().zip(u) {
                        out[i] = ui;
                    }
                }
                out
            }
        }
    }

    /// `t·h(p) + ½‖v − p‖²` at `p = prox(v, t)`.
    pub fn moreau_value(&self, v: &DVector<f64>, t: f64) -> Result<f64> {
        let p = self.prox(v, t)?;
        Ok(t * self.value(&p) + 0.5 * (v - &p).norm_squared())
    }
}

fn check_nonneg(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(AdmmError::InvalidTerm(format!("{name} = {x} must be finite and nonnegative")))
    }
}

fn validate_groups(groups: &[Vec<usize>], weights: &[f64], n: usize) -> Result<()> {
    if groups.len() != weights.len() {
        return Err(AdmmError::InvalidTerm(format!(
            "{} groups but {} weights",
            groups.len(),
            weights.len()
        )));
    }
    for &w in weights {
        check_nonneg("group weight", w)?;
    }
    let mut seen = vec![false; n];
    for g in groups {
        for &i in g {
            if i >= n {
                return Err(AdmmError::InvalidTerm(format!("group index {i} out of range {n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(AdmmError::InvalidTerm(format!("index {i} appears in two groups")));
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(AdmmError::InvalidTerm(format!("index {i} is not covered by any group")));
    }
    Ok(())
}

fn sparse_group_in_place(
    w: &mut DVector<f64>,
    l1: f64,
    groups: &[Vec<usize>],
    weights: &[f64],
    t: f64,
) {
    for (g, &weight) in groups.iter().zip(weights.iter()) {
        let mut norm_sq = 0.0;
        for &i in g {
            w[i] = soft(w[i], l1);
            norm_sq += w[i] * w[i];
        }
        let norm = norm_sq.sqrt();
        let threshold = t * weight;
        if norm <= threshold {
            for &i in g {
                w[i] = 0.0;
            }
        } else if threshold > 0.0 {
            let scale = 1.0 - threshold / norm;
            for &i in g {
                w[i] *= scale;
            }
        }
    }
}

/// Sparse-group prox for `λ‖x‖₁ + Σ_J w_J‖x_J‖₂`: soft-threshold by `tλ`, then
/// shrink each group's norm by `t·w_J` (exactly zero when the norm is at most `t·w_J`).
pub fn prox_sparse_group(
    v: &DVector<f64>,
    lambda: f64,
    groups: &[Vec<usize>],
    weights: &[f64],
    t: f64,
) -> Result<DVector<f64>> {
    let term = ProxTerm::SparseGroup {
        lambda,
        groups: groups.to_vec(),
        weights: weights.to_vec(),
    };
    term.validate(v.len())?;
    term.prox(v, t)
}

/// Minimizes `κ‖u‖₂ + ½‖u − s‖²` over a box containing the origin, where `s`
/// has already been soft-thresholded.
///
/// For a multiplier θ = κ/‖u‖ the minimizer is `clamp(s/(1+θ))`, and
/// `θ ↦ θ‖clamp(s/(1+θ))‖` is nondecreasing, so θ is found by bisection.
fn boxed_group_shrink(s: &[f64], idx: &[usize], kappa: f64, bounds: Bounds<'_>) -> Vec<f64> {
    let at = |theta: f64| -> Vec<f64> {
        s.iter()
            .zip(idx.iter())
            .map(|(&si, &i)| bounds.clamp(i, si / (1.0 + theta)))
            .collect()
    };
    let norm = |u: &[f64]| u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if kappa == 0.0 {
        return at(0.0);
    }
    // The unconstrained shrink is the answer whenever it lies in the box.
    let ns = norm(s);
    if ns <= kappa {
        if idx.iter().all(|&i| bounds.lo(i) <= 0.0 && 0.0 <= bounds.hi(i)) {
            return vec![0.0; s.len()];
        }
    } else {
        let scale = 1.0 - kappa / ns;
        let free: Vec<f64> = s.iter().map(|si| si * scale).collect();
        if free
            .iter()
            .zip(idx.iter())
            .all(|(&u, &i)| bounds.lo(i) <= u && u <= bounds.hi(i))
        {
            return free;
        }
    }
    // Limit of θ‖u(θ)‖ as θ → ∞: coordinates that can move toward s remain.
    let limit = norm(
        &s.iter()
            .zip(idx.iter())
            .map(|(&si, &i)| {
                if (si > 0.0 && bounds.hi(i) > 0.0) || (si < 0.0 && bounds.lo(i) < 0.0) {
                    si
                } else {
                    0.0
                }
            })
            .collect::<Vec<_>>(),
    );
    if limit <= kappa {
        return vec![0.0; s.len()];
    }
    // r(θ) = θ‖u(θ)‖ − κ is increasing; safeguarded Newton on a bracket.
    let eval = |theta: f64| -> (f64, f64) {
        let (mut sq, mut dsq) = (0.0, 0.0);
        for (&si, &i) in s.iter().zip(idx.iter()) {
            let free = si / (1.0 + theta);
            let u = bounds.clamp(i, free);
            sq += u * u;
            if u == free {
                dsq -= 2.0 * u * si / ((1.0 + theta) * (1.0 + theta));
            }
        }
        let nrm = sq.sqrt();
        let d = if nrm > 0.0 { nrm + theta * dsq / (2.0 * nrm) } else { 0.0 };
        (theta * nrm - kappa, d)
    };
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while eval(hi).0 < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    let mut theta = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (r, d) = eval(theta);
        if r == 0.0 {
            break;
        }
        if r < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let newton = theta - r / d;
        theta = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (r / d).abs() <= f64::EPSILON * theta {
            break;
        }
    }
    at(theta)
}
