//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use blockadmm::ProxTerm;
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Every prox kind exercised by the oracle tests. The first six are checked
/// coordinatewise in 1-D, the group kinds in 2-D.
pub const KINDS: [&str; 10] = [
    "zero",
    "l1",
    "box",
    "nonneg",
    "linear",
    "l1_box_linear",
    "group_l2",
    "sparse_group",
    "group_l2_box",
    "sparse_group_box",
];

pub fn is_planar(kind: &str) -> bool {
    kind.starts_with("group") || kind.starts_with("sparse")
}

/// `h(u) = λ‖u‖₁ + w‖u‖₂ + ⟨b, u⟩ + indicator(lo ≤ u ≤ hi)` written out
/// directly, independent of `ProxTerm::value`.
#[derive(Debug, Clone)]
pub struct Composite {
    pub lambda: f64,
    pub w: f64,
    pub b: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Composite {
    pub fn h(&self, u: &[f64]) -> f64 {
        let mut val = 0.0;
        let mut sq = 0.0;
        for (i, &x) in u.iter().enumerate() {
            if x < self.lo[i] || x > self.hi[i] {
                return f64::INFINITY;
            }
            val += self.lambda * x.abs() + self.b[i] * x;
            sq += x * x;
        }
        val + self.w * sq.sqrt()
    }

    /// Bound on the norm of any subgradient of the non-indicator part.
    fn subgradient_bound(&self) -> f64 {
        let n = self.b.len() as f64;
        self.lambda * n.sqrt() + self.w + self.b.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct ProxCase {
    pub kind: &'static str,
    pub term: ProxTerm,
    pub model: Composite,
    pub v: DVector<f64>,
    pub t: f64,
}

impl ProxCase {
    pub fn objective(&self, u: &[f64]) -> f64 {
        let d2: f64 = u.iter().zip(self.v.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        self.t * self.model.h(u) + 0.5 * d2
    }
}

/// Multiple of 0.02 in `[lo, hi]`, so box edges lie on every oracle grid.
fn grid_aligned(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo..hi) / 0.02).round() * 0.02
}

pub fn random_case(kind: &'static str, n: usize, rng: &mut ChaCha8Rng) -> ProxCase {
    let v = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let t = rng.random_range(0.1..1.5);
    let mut model = Composite {
        lambda: 0.0,
        w: 0.0,
        b: vec![0.0; n],
        lo: vec![f64::NEG_INFINITY; n],
        hi: vec![f64::INFINITY; n],
    };
    let random_box = |model: &mut Composite, rng: &mut ChaCha8Rng, contain_zero: bool| {
        for i in 0..n {
            let (lo, hi) = if contain_zero {
                (grid_aligned(rng, -1.5, 0.0), grid_aligned(rng, 0.0, 1.5))
            } else {
                let a = grid_aligned(rng, -2.0, 1.5);
                (a, a + grid_aligned(rng, 0.0, 1.5))
            };
            model.lo[i] = lo;
            model.hi[i] = hi;
        }
    };
    let term = match kind {
        "zero" => ProxTerm::Zero,
        "l1" => {
            model.lambda = rng.random_range(0.0..1.5);
            ProxTerm::l1(model.lambda)
        }
        "box" => {
            random_box(&mut model, rng, false);
            ProxTerm::boxed(model.lo.clone(), model.hi.clone())
        }
        "nonneg" => {
            model.lo = vec![0.0; n];
            ProxTerm::NonnegIndicator
        }
        "linear" => {
            model.b = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            ProxTerm::Linear { b: model.b.clone() }
        }
        "l1_box_linear" => {
            model.lambda = rng.random_range(0.0..1.5);
            model.b = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            random_box(&mut model, rng, false);
            ProxTerm::sum(vec![
                ProxTerm::l1(model.lambda),
                ProxTerm::boxed(model.lo.clone(), model.hi.clone()),
                ProxTerm::Linear { b: model.b.clone() },
            ])
        }
        "group_l2" | "group_l2_box" => {
            model.w = rng.random_range(0.0..1.5);
            let g = ProxTerm::group_l2_single(n, model.w);
            if kind == "group_l2_box" {
                random_box(&mut model, rng, true);
                g.with_box(model.lo.clone(), model.hi.clone())
            } else {
                g
            }
        }
        "sparse_group" | "sparse_group_box" => {
            model.lambda = rng.random_range(0.0..1.0);
            model.w = rng.random_range(0.0..1.5);
            let g = ProxTerm::SparseGroup {
                lambda: model.lambda,
                groups: vec![(0..n).collect()],
                weights: vec![model.w],
            };
            if kind == "sparse_group_box" {
                random_box(&mut model, rng, true);
                g.with_box(model.lo.clone(), model.hi.clone())
            } else {
                g
            }
        }
        other => panic!("unknown kind {other}"),
    };
    ProxCase {
        kind,
        term,
        model,
        v,
        t,
    }
}

/// Search interval for coordinate `i`: the prox lies within `t·G` of `v`
/// before the box is applied.
fn search_interval(case: &ProxCase, i: usize) -> (f64, f64) {
    let r = case.t * case.model.subgradient_bound() + 0.1;
    let (lo, hi) = (case.model.lo[i], case.model.hi[i]);
    let a = (case.v[i] - r).clamp(lo, hi);
    let b = (case.v[i] + r).clamp(lo, hi);
    (a, b)
}

fn grid_points(a: f64, b: f64, step: f64) -> impl Iterator<Item = f64> {
    let first = (a / step).ceil() as i64;
    let last = (b / step).floor() as i64;
    (first..=last).map(move |i| i as f64 * step)
}

/// 1-D convex minimization by nested grids ending at step `1e-5`. Each level
/// brackets the minimizer between the neighbours of the best candidate,
/// which is exact for convex functions.
pub fn grid_argmin_1d(f: impl Fn(f64) -> f64, a: f64, b: f64, kinks: &[f64]) -> f64 {
    let (mut lo, mut hi) = (a, b);
    let mut best = a;
    for step in [1e-2, 1e-3, 1e-4, 1e-5] {
        let mut cand: Vec<f64> = grid_points(lo, hi, step)
            .chain([lo, hi])
            .chain(kinks.iter().copied().filter(|k| (lo..=hi).contains(k)))
            .collect();
        cand.sort_by(f64::total_cmp);
        cand.dedup();
        let (idx, _) = cand
            .iter()
            .enumerate()
            .min_by(|x, y| f(*x.1).total_cmp(&f(*y.1)))
            .unwrap();
        best = cand[idx];
        lo = cand[idx.saturating_sub(1)];
        hi = cand[(idx + 1).min(cand.len() - 1)];
    }
    best
}

/// 2-D minimization on nested grids: step `2e-2` over the search box, then
/// `1e-3` and finally `1e-4` around the running best.
pub fn grid_argmin_2d(f: impl Fn(f64, f64) -> f64, bx: (f64, f64), by: (f64, f64)) -> (f64, f64) {
    let mut window = (bx, by);
    let mut best = (bx.0, by.0);
    for (step, half) in [(2e-2, 0.06), (1e-3, 4e-3), (1e-4, 0.0)] {
        let ((x0, x1), (y0, y1)) = window;
        let mut best_val = f64::INFINITY;
        let xs: Vec<f64> = grid_points(x0, x1, step).chain([x0, x1]).collect();
        let ys: Vec<f64> = grid_points(y0, y1, step).chain([y0, y1]).collect();
        for &x in &xs {
            for &y in &ys {
                let val = f(x, y);
                if val < best_val {
                    best_val = val;
                    best = (x, y);
                }
            }
        }
        if half > 0.0 {
            window = (
                ((best.0 - half).max(bx.0), (best.0 + half).min(bx.1)),
                ((best.1 - half).max(by.0), (best.1 + half).min(by.1)),
            );
        }
    }
    best
}

/// Brute-force prox: coordinatewise for separable kinds, planar otherwise.
pub fn grid_prox(case: &ProxCase) -> DVector<f64> {
    let n = case.v.len();
    if is_planar(case.kind) {
        assert_eq!(n, 2, "planar oracle needs dimension 2");
        let (p, q) = grid_argmin_2d(
            |x, y| case.objective(&[x, y]),
            search_interval(case, 0),
            search_interval(case, 1),
        );
        DVector::from_vec(vec![p, q])
    } else {
        DVector::from_fn(n, |i, _| {
            let single = ProxCase {
                kind: case.kind,
                term: ProxTerm::Zero,
                model: Composite {
                    lambda: case.model.lambda,
                    w: 0.0,
                    b: vec![case.model.b[i]],
                    lo: vec![case.model.lo[i]],
                    hi: vec![case.model.hi[i]],
                },
                v: DVector::from_element(1, case.v[i]),
                t: case.t,
            };
            let (a, b) = search_interval(&single, 0);
            grid_argmin_1d(|x| single.objective(&[x]), a, b, &[0.0])
        })
    }
}
