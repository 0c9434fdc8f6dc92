//! Small dense helpers: spectral norms and extreme eigenvalues.

use nalgebra::{DMatrix, DVector};

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 20_000;

/// Spectral norm ‖M‖₂ by power iteration on the smaller Gram matrix.
///
/// Converges on the Rayleigh quotient to relative 1e-12; when the dominant
/// eigenvalue gap is too small for that within the iteration cap, falls back
/// to a symmetric eigendecomposition of the Gram matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let gram = if m.ncols() <= m.nrows() {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    largest_eigenvalue_psd(&gram).max(0.0).sqrt()
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix.
pub fn largest_eigenvalue_psd(gram: &DMatrix<f64>) -> f64 {
    let n = gram.nrows();
    if n == 0 {
        return 0.0;
    }
    if n == 1 {
        return gram[(0, 0)];
    }
    // Deterministic start with no special alignment to coordinate axes.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i as f64) * 0.618_033_988_7).sin());
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = gram * &v;
        let rayleigh = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (rayleigh - estimate).abs() <= POWER_TOL * rayleigh.abs() {
            return rayleigh;
        }
        estimate = rayleigh;
    }
    symmetric_extremes(gram).1
}

/// (λ_min, λ_max) of a symmetric matrix.
pub fn symmetric_extremes(sym: &DMatrix<f64>) -> (f64, f64) {
    if sym.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = sym.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Returns `Some(s)` when `sym` equals `s·I` exactly (all off-diagonals zero,
/// identical diagonal entries).
pub fn scalar_identity_multiple(sym: &DMatrix<f64>) -> Option<f64> {
    let n = sym.nrows();
    if n == 0 {
        return None;
    }
    let s = sym[(0, 0)];
    for i in 0..n {
        for j in 0..n {
            let expected = if i == j { s } else { 0.0 };
            if sym[(i, j)] != expected {
                return None;
            }
        }
    }
    Some(s)
}
