//! Random problem families used by the harness.
//!
//! Every call seeds `ChaCha8Rng` from `seed` and selects a stream by family,
//! so the same spec always yields the same problem and different families
//! never share random draws.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{AdmmError, Result};
use crate::problem::{build_problem, Block, Problem, SmoothTerm, RANK_TOL};
use crate::prox::ProxTerm;

const STREAM_L1_KBLOCK: u64 = 1;
const STREAM_GROUP_L2: u64 = 2;
const STREAM_LASSO: u64 = 3;
const STREAM_CONSENSUS: u64 = 4;

/// Draws before giving up on a full-column-rank group block.
const RANK_ATTEMPTS: usize = 3;

/// Parameters of one generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GeneratorSpec {
    L1Kblock {
        m: usize,
        k: usize,
        a: f64,
        b: f64,
        seed: u64,
    },
    GroupL2 {
        m: usize,
        k: usize,
        n_k: usize,
        a: f64,
        b: f64,
        seed: u64,
    },
    Lasso {
        n_obs: usize,
        n_feat: usize,
        lambda: f64,
        noise: f64,
        seed: u64,
    },
    Consensus {
        k: usize,
        rows: usize,
        cols: usize,
        w: f64,
        seed: u64,
    },
}

impl GeneratorSpec {
    pub fn generate(&self) -> Result<Problem> {
        match *self {
            GeneratorSpec::L1Kblock { m, k, a, b, seed } => gen_l1_kblock(m, k, a, b, seed),
            GeneratorSpec::GroupL2 { m, k, n_k, a, b, seed } => gen_group_l2(m, k, n_k, a, b, seed),
            GeneratorSpec::Lasso {
                n_obs,
                n_feat,
                lambda,
                noise,
                seed,
            } => gen_lasso(n_obs, n_feat, lambda, noise, seed),
            GeneratorSpec::Consensus { k, rows, cols, w, seed } => gen_consensus(k, rows, cols, w, seed),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            GeneratorSpec::L1Kblock { .. } => "l1_kblock",
            GeneratorSpec::GroupL2 { .. } => "group_l2",
            GeneratorSpec::Lasso { .. } => "lasso",
            GeneratorSpec::Consensus { .. } => "consensus",
        }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Column-major fill keeps the draw order independent of storage details.
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn uniform_vector(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| if lo == hi { lo } else { rng.random_range(lo..hi) })
}

fn check_interval(a: f64, b: f64) -> Result<()> {
    if a.is_finite() && b.is_finite() && a < b {
        Ok(())
    } else {
        Err(AdmmError::InvalidParameter(format!("box [{a}, {b}] must satisfy a < b")))
    }
}

fn positive(what: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(AdmmError::InvalidParameter(format!("{what} must be positive")))
    } else {
        Ok(())
    }
}

fn nonnegative(what: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(AdmmError::InvalidParameter(format!("{what} = {v} must be nonnegative")))
    }
}

/// `min Σ|x_k|` s.t. `Σ e_k x_k = q`, `a ≤ x_k ≤ b`, with `K` scalar blocks,
/// Gaussian columns `e_k ∈ ℝᵐ` and `q = E x₀` for `x₀` uniform in the box.
pub fn gen_l1_kblock(m: usize, k: usize, a: f64, b: f64, seed: u64) -> Result<Problem> {
    positive("m", m)?;
    positive("K", k)?;
    check_interval(a, b)?;
    let mut rng = rng_for(seed, STREAM_L1_KBLOCK);
    let e = gaussian_matrix(&mut rng, m, k);
    let x0 = uniform_vector(&mut rng, k, a, b);
    let q = &e * &x0;
    let blocks = (0..k)
        .map(|j| {
            Block::new(e.columns(j, 1).into_owned())
                .with_nonsmooth(ProxTerm::l1(1.0))
                .with_box(a, b)
        })
        .collect();
    build_problem(blocks, q)
}

/// `min Σ‖x_k‖₂` s.t. `Σ E_k x_k = q`, `a ≤ x_k ≤ b`, with Gaussian
/// `E_k ∈ ℝ^{m×n_k}` of full column rank and `q = E x₀`.
///
/// The box must contain 0.
pub fn gen_group_l2(m: usize, k: usize, n_k: usize, a: f64, b: f64, seed: u64) -> Result<Problem> {
    positive("m", m)?;
    positive("K", k)?;
    positive("n_k", n_k)?;
    check_interval(a, b)?;
    if m < n_k {
        return Err(AdmmError::InvalidParameter(format!(
            "m = {m} < n_k = {n_k}: blocks cannot have full column rank"
        )));
    }
    if !(a <= 0.0 && 0.0 <= b) {
        return Err(AdmmError::InvalidParameter(format!(
            "box [{a}, {b}] must contain 0 for the group norm"
        )));
    }
    let mut rng = rng_for(seed, STREAM_GROUP_L2);
    let mut mats = Vec::with_capacity(k);
    for j in 0..k {
        let mut attempt = 0;
        let ek = loop {
            let ek = gaussian_matrix(&mut rng, m, n_k);
            let ete = ek.transpose() * &ek;
            let (lmin, lmax) = crate::linalg::symmetric_extremes(&ete);
            if lmin > RANK_TOL * lmax {
                break ek;
            }
            attempt += 1;
            if attempt == RANK_ATTEMPTS {
                return Err(AdmmError::BlockDimension {
                    block: j,
                    reason: format!("no full-column-rank draw in {RANK_ATTEMPTS} attempts"),
                });
            }
        };
        mats.push(ek);
    }
    let x0 = uniform_vector(&mut rng, k * n_k, a, b);
    let mut q = DVector::zeros(m);
    for (j, ek) in mats.iter().enumerate() {
        q += ek * x0.rows(j * n_k, n_k);
    }
    let blocks = mats
        .into_iter()
        .map(|ek| {
            Block::new(ek)
                .with_nonsmooth(ProxTerm::group_l2_single(n_k, 1.0))
                .with_box(a, b)
        })
        .collect();
    build_problem(blocks, q)
}

/// `min ‖r‖² + λ‖x‖₁` s.t. `Ax + r = b` as a two-block problem with
/// `E = [A, I]`, `q = b`. `A` is Gaussian and `b = A·x_sparse + noise`, where
/// `x_sparse` has `max(1, n_feat/10)` Gaussian nonzeros.
pub fn gen_lasso(n_obs: usize, n_feat: usize, lambda: f64, noise: f64, seed: u64) -> Result<Problem> {
    positive("n_obs", n_obs)?;
    positive("n_feat", n_feat)?;
    nonnegative("lambda", lambda)?;
    nonnegative("noise", noise)?;
    let mut rng = rng_for(seed, STREAM_LASSO);
    let a = gaussian_matrix(&mut rng, n_obs, n_feat);
    let nnz = (n_feat / 10).max(1);
    let mut x_sparse = DVector::zeros(n_feat);
    let mut idx: Vec<usize> = (0..n_feat).collect();
    for i in 0..nnz {
        let j = rng.random_range(i..n_feat);
        idx.swap(i, j);
        x_sparse[idx[i]] = rng.sample(StandardNormal);
    }
    let b = &a * &x_sparse + gaussian_vector(&mut rng, n_obs) * noise;
    lasso_problem(a, b, lambda)
}

/// Two-block LASSO for given data.
pub fn lasso_problem(a: DMatrix<f64>, b: DVector<f64>, lambda: f64) -> Result<Problem> {
    nonnegative("lambda", lambda)?;
    let n_obs = a.nrows();
    if b.len() != n_obs {
        return Err(AdmmError::Dimension {
            what: "lasso observations",
            expected: n_obs,
            got: b.len(),
        });
    }
    let features = Block::new(a).with_nonsmooth(ProxTerm::l1(lambda));
    // ‖r‖² = ½‖√2·r‖².
    let residual = Block::new(DMatrix::identity(n_obs, n_obs)).with_composed_smooth(
        DMatrix::identity(n_obs, n_obs) * std::f64::consts::SQRT_2,
        SmoothTerm::quadratic(DVector::zeros(n_obs)),
    );
    build_problem(vec![features, residual], b)
}

/// `min Σ_k ‖A x_k − b‖² + w‖x_k‖₁` s.t. `x_k − z = 0` with Gaussian `A`, `b`.
/// Blocks `0..K` are the local copies, block `K` is `z`.
pub fn gen_consensus(k: usize, rows: usize, cols: usize, w: f64, seed: u64) -> Result<Problem> {
    positive("rows", rows)?;
    positive("cols", cols)?;
    let mut rng = rng_for(seed, STREAM_CONSENSUS);
    let data: Vec<_> = (0..k)
        .map(|_| {
            let a = gaussian_matrix(&mut rng, rows, cols);
            let b = gaussian_vector(&mut rng, rows);
            (a, b)
        })
        .collect();
    consensus_problem(&data, w)
}

/// Consensus form of `Σ_k ‖A_k x_k − b_k‖² + w‖x_k‖₁` with `x_k = z`, one
/// `(A_k, b_k)` pair per local block.
pub fn consensus_problem(data: &[(DMatrix<f64>, DVector<f64>)], w: f64) -> Result<Problem> {
    let k = data.len();
    if k < 2 {
        return Err(AdmmError::InvalidParameter(format!("consensus needs K ≥ 2, got {k}")));
    }
    nonnegative("w", w)?;
    let cols = data[0].0.ncols();
    for (a, b) in data {
        if a.ncols() != cols {
            return Err(AdmmError::Dimension {
                what: "consensus columns",
                expected: cols,
                got: a.ncols(),
            });
        }
        if b.len() != a.nrows() {
            return Err(AdmmError::Dimension {
                what: "consensus observations",
                expected: a.nrows(),
                got: b.len(),
            });
        }
    }
    let m = k * cols;
    let mut blocks = Vec::with_capacity(k + 1);
    let mut e_z = DMatrix::zeros(m, cols);
    for (j, (a, b)) in data.iter().enumerate() {
        let mut e = DMatrix::zeros(m, cols);
        e.view_mut((j * cols, 0), (cols, cols)).fill_with_identity();
        e_z.view_mut((j * cols, 0), (cols, cols)).fill_with_identity();
        blocks.push(
            Block::new(e)
                .with_composed_smooth(a * std::f64::consts::SQRT_2, SmoothTerm::quadratic(b * std::f64::consts::SQRT_2))
                .with_nonsmooth(ProxTerm::l1(w)),
        );
    }
    blocks.push(Block::new(-e_z));
    build_problem(blocks, DVector::zeros(m))
}
