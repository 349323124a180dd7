//! Proximal operators of the three regularizers in the representation problem.

use ndarray::{Array2, Zip};

use super::Theta;
use crate::error::{Error, Result};
use crate::linalg;

/// Singular value thresholding: the minimizer of `0.5 |Z - x|_F^2 + tau |Z|_*`.
///
/// Singular values at or below `tau` are dropped, the rest shrink by `tau`.
pub fn svt(x: &Array2<f64>, tau: f64) -> Result<Array2<f64>> {
    Ok(svt_with_spectrum(x, tau)?.0)
}

/// Like [`svt`], also returning the shrunk singular values.
pub(crate) fn svt_with_spectrum(x: &Array2<f64>, tau: f64) -> Result<(Array2<f64>, Vec<f64>)> {
    check_tau(tau)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("svt input is not finite".into()));
    }
    if x.is_empty() {
        return Ok((x.clone(), Vec::new()));
    }
    let d = linalg::svd(x)?;
    let kept = d.s.iter().take_while(|&&s| s > tau).count();
    let shrunk: Vec<f64> = d.s[..kept].iter().map(|s| s - tau).collect();
    if kept == 0 {
        return Ok((Array2::zeros(x.raw_dim()), shrunk));
    }
    let mut us = d.u.slice(ndarray::s![.., ..kept]).to_owned();
    for (mut col, s) in us.columns_mut().into_iter().zip(&shrunk) {
        col *= *s;
    }
    let out = us.dot(&d.v.slice(ndarray::s![.., ..kept]).t());
    Ok((out, shrunk))
}

/// Column-wise group shrinkage, the prox of `tau * sum_j |x_j|_2`.
pub fn prox_l21(x: &Array2<f64>, tau: f64) -> Result<Array2<f64>> {
    check_tau(tau)?;
    let mut out = x.clone();
    Zip::from(out.columns_mut()).par_for_each(|mut col| {
        let norm = col.dot(&col).sqrt();
        let scale = if norm > tau { 1.0 - tau / norm } else { 0.0 };
        col *= scale;
    });
    Ok(out)
}

/// Entrywise soft threshold with per-entry thresholds `tau * t_ij`; entries
/// where `t_ij = 0` pass through untouched.
pub fn prox_weighted_l1(x: &Array2<f64>, theta: &Theta, tau: f64) -> Result<Array2<f64>> {
    check_tau(tau)?;
    if theta.dim() != x.nrows() || x.nrows() != x.ncols() {
        return Err(Error::Dimension(format!(
            "weight matrix is {0}x{0}, input is {1}x{2}",
            theta.dim(),
            x.nrows(),
            x.ncols()
        )));
    }
    let mut out = x.clone();
    if theta.is_zero() || tau == 0.0 {
        return Ok(out);
    }
    Zip::from(&mut out)
        .and(theta.matrix())
        .par_for_each(|v, &t| *v = soft_threshold(*v, tau * f64::from(t)));
    Ok(out)
}

#[inline]
pub(crate) fn soft_threshold(v: f64, threshold: f64) -> f64 {
    if threshold == 0.0 {
        v
    } else {
        v.signum() * (v.abs() - threshold).max(0.0)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "threshold must be finite and nonnegative, got {tau}"
        )))
    }
}
