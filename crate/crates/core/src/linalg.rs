//! Thin bridge between the `ndarray` storage used across the crate and the
//! dense decompositions provided by `faer`.

use faer::{Mat, MatRef, Side};
use ndarray::Array2;

use crate::error::{Error, Result};

pub(crate) fn to_faer(a: &Array2<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_faer(a: MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

/// Thin singular value decomposition `a = u * diag(s) * v^T`, singular values
/// in nonincreasing order.
pub struct Svd {
    pub u: Array2<f64>,
    pub s: Vec<f64>,
    pub v: Array2<f64>,
}

pub fn svd(a: &Array2<f64>) -> Result<Svd> {
    let svd = to_faer(a)
        .thin_svd()
        .map_err(|e| Error::NoConvergence(format!("svd: {e:?}")))?;
    let s = svd.S().column_vector().iter().copied().collect();
    Ok(Svd {
        u: from_faer(svd.U()),
        s,
        v: from_faer(svd.V()),
    })
}

/// Singular values only, nonincreasing.
pub fn singular_values(a: &Array2<f64>) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Ok(Vec::new());
    }
    to_faer(a)
        .singular_values()
        .map_err(|e| Error::NoConvergence(format!("singular values: {e:?}")))
}

pub fn nuclear_norm(a: &Array2<f64>) -> Result<f64> {
    Ok(singular_values(a)?.iter().sum())
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues nondecreasing,
/// eigenvectors as columns.
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let evd = to_faer(a)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::NoConvergence(format!("eigensolver: {e:?}")))?;
    let values = evd.S().column_vector().iter().copied().collect();
    Ok((values, from_faer(evd.U())))
}

/// Largest singular value by power iteration on `a a^T` from a fixed start
/// vector; a lower bound that tightens with `iters`.
pub fn spectral_norm_estimate(a: &Array2<f64>, iters: usize) -> f64 {
    let gram = a.dot(&a.t());
    let mut v = ndarray::Array1::from_elem(gram.nrows(), 1.0);
    let mut estimate = 0.0;
    for _ in 0..iters {
        let w = gram.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = v.dot(&w) / v.dot(&v);
        v = w / norm;
    }
    estimate.max(0.0).sqrt()
}

pub fn frobenius_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn frobenius_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Numerical rank with a relative singular-value cutoff.
pub fn rank(a: &Array2<f64>, rel_tol: f64) -> Result<usize> {
    let sv = singular_values(a)?;
    let Some(&top) = sv.first() else {
        return Ok(0);
    };
    Ok(sv.iter().filter(|&&s| s > rel_tol * top).count())
}
