//! Dense linear-algebra helpers shared by the solvers.
//!
//! All `vec(·)` operations are column-major, which is also nalgebra's storage
//! order, so `matrix.as_slice()` is `vec(matrix)`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::math;

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Column-major vectorization.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v)
}

/// Eigen-based pseudo-inverse of a symmetric positive semidefinite matrix.
#[derive(Debug, Clone)]
pub struct SymPinv {
    pub pinv: DMatrix<f64>,
    pub rank: usize,
    pub lambda_max: f64,
    /// Smallest eigenvalue kept by the truncation (0 when rank is 0).
    pub lambda_min_kept: f64,
}

/// Minimum-norm pseudo-inverse of a symmetric PSD matrix; eigenvalues below
/// `rel_tol * λ_max` (and all negative ones) are treated as zero.
pub fn sym_pinv(m: &DMatrix<f64>, rel_tol: f64) -> SymPinv {
    let n = m.nrows();
    if n == 0 {
        return SymPinv { pinv: DMatrix::zeros(0, 0), rank: 0, lambda_max: 0.0, lambda_min_kept: 0.0 };
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rel_tol * lambda_max;
    let mut pinv = DMatrix::zeros(n, n);
    let mut rank = 0;
    let mut lambda_min_kept = f64::INFINITY;
    if lambda_max > 0.0 {
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > cutoff {
                rank += 1;
                lambda_min_kept = lambda_min_kept.min(lam);
                let u = eig.eigenvectors.column(k);
                pinv.ger(1.0 / lam, &u, &u, 1.0);
            }
        }
    }
    if rank == 0 {
        lambda_min_kept = 0.0;
    }
    SymPinv { pinv, rank, lambda_max, lambda_min_kept }
}

/// Moore-Penrose pseudo-inverse via SVD with relative truncation.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_tol * smax && s > 0.0 {
            out.ger(1.0 / s, &vt.row(k).transpose(), &u.column(k), 1.0);
        }
    }
    out
}

/// Singular values in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().cloned().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    s
}

/// Largest eigenvalue of a symmetric PSD matrix.
pub fn lambda_max_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().cloned().fold(0.0_f64, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn l1_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

/// `l1` norm of every row.
pub fn row_l1_norms(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().map(|row| row.iter().map(|v| v.abs()).sum()).collect()
}

/// Euclidean projection onto the probability simplex scaled to `radius`.
fn project_simplex(x: &mut [f64], radius: f64) {
    let mut sorted: Vec<f64> = x.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - radius) / (k as f64 + 1.0);
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    for v in x.iter_mut() {
        *v = (*v - theta).max(0.0);
    }
}

/// Projection onto `{x ≥ 0, Σx ≤ 1}` (the upper bound `x ≤ 1` is implied).
pub fn project_capped_simplex(x: &mut [f64]) {
    let positive: f64 = x.iter().map(|v| v.max(0.0)).sum();
    if positive <= 1.0 {
        for v in x.iter_mut() {
            *v = v.max(0.0);
        }
    } else {
        project_simplex(x, 1.0);
    }
}

/// Projection onto the `l1` ball of the given radius.
pub fn project_l1_ball(x: &mut [f64], radius: f64) {
    if radius <= 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    if l1_norm(x) <= radius {
        return;
    }
    let mut mag: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    project_simplex(&mut mag, radius);
    for (v, m) in x.iter_mut().zip(mag) {
        *v = if *v < 0.0 { -m } else { m };
    }
}

/// Frobenius norm squared.
pub fn fro2(m: &DMatrix<f64>) -> f64 {
    m.norm_squared()
}

pub(crate) fn hypot3(dx: f64, dy: f64, dz: f64) -> f64 {
    math::sqrt(dx * dx + dy * dy + dz * dz)
}
