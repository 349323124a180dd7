//! Low-rank self-representation of the measurement columns.
//!
//! Solves
//!
//! ```text
//! min  |z|_* + alpha |Theta . c|_1 + lambda |g|_{2,1}
//! s.t. y = y c + g,  c = z,  diag(z) = 0
//! ```
//!
//! with ADMM: `z` by singular value thresholding, `g` by column shrinkage,
//! `c` by an exact or a linearized step (see [`CStep`]), then dual ascent and
//! a geometric penalty increase. With `alpha = 0` this is plain low-rank
//! representation.

mod prox;

use std::collections::VecDeque;
use std::fmt::Write as _;

use ndarray::Array2;

pub use prox::{prox_l21, prox_weighted_l1, svt};

use crate::error::{Error, Result};
use crate::linalg::{
    frobenius_distance, frobenius_norm, nuclear_norm, spectral_norm_estimate, symmetric_eigen,
};
use crate::sensing::Measurements;

/// Iterations at the end of a run whose objective is always recorded.
pub const OBJECTIVE_TAIL: usize = 10;

/// Binary pair mask: `t_ij = 1` when pixels `i` and `j` are believed to lie
/// in different subspaces. Symmetric with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Theta {
    t: Array2<u8>,
    zero: bool,
}

impl Theta {
    pub fn zeros(n: usize) -> Self {
        Self {
            t: Array2::zeros((n, n)),
            zero: true,
        }
    }

    pub fn new(t: Array2<u8>) -> Result<Self> {
        let n = t.nrows();
        if t.ncols() != n {
            return Err(Error::Dimension(format!(
                "theta is {:?}, must be square",
                t.dim()
            )));
        }
        for i in 0..n {
            if t[[i, i]] != 0 {
                return Err(Error::InvalidArgument(format!(
                    "theta diagonal entry {i} is nonzero"
                )));
            }
            for j in 0..i {
                if t[[i, j]] > 1 || t[[i, j]] != t[[j, i]] {
                    return Err(Error::InvalidArgument(format!(
                        "theta must be binary and symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let zero = t.iter().all(|&v| v == 0);
        Ok(Self { t, zero })
    }

    pub fn matrix(&self) -> &Array2<u8> {
        &self.t
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    /// The subspace-structured norm `|Theta . c|_1`.
    pub fn structured_norm(&self, c: &Array2<f64>) -> f64 {
        if self.zero {
            return 0.0;
        }
        c.iter()
            .zip(self.t.iter())
            .filter(|(_, &t)| t != 0)
            .map(|(v, _)| v.abs())
            .sum()
    }
}

/// How the representation `c` is updated each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CStep {
    /// Exact minimization of the quadratic terms through an `S x S` solve.
    /// A nonzero structured term is split off onto a copy `w` of `c`
    /// (constraint `c = w`) and handled by its own soft threshold.
    #[default]
    Exact,
    /// One proximal-gradient step of length `1/eta`. Needs a slow penalty
    /// schedule (`rho` near 1.1) to converge.
    Linearized,
}

impl std::str::FromStr for CStep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "linearized" => Ok(Self::Linearized),
            other => Err(Error::InvalidArgument(format!(
                "unknown c-step '{other}' (expected exact or linearized)"
            ))),
        }
    }
}

impl std::fmt::Display for CStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Linearized => "linearized",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Weight of the column-sparse error term.
    pub lambda: f64,
    /// Weight of the subspace-structured norm.
    pub alpha: f64,
    pub mu0: f64,
    pub rho: f64,
    pub mu_max: f64,
    pub c_step: CStep,
    /// Linearization constant of [`CStep::Linearized`]; `None` picks
    /// `1.02 (|y|_2^2 + 1)`.
    pub eta: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Segmentation / re-solve rounds after the initial unstructured solve.
    pub outer_iters: usize,
    /// Evaluate the objective at every iteration, not just the final ones.
    pub trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            alpha: 0.05,
            mu0: 0.1,
            rho: 1.1,
            mu_max: 1e10,
            c_step: CStep::Exact,
            eta: None,
            tol: 1e-6,
            max_iter: 500,
            outer_iters: 3,
            trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be nonnegative");
        }
        if !(self.mu0 > 0.0 && self.mu0 <= self.mu_max && self.mu_max.is_finite()) {
            return bad("penalty must satisfy 0 < mu0 <= mu_max < inf");
        }
        if !(self.rho >= 1.0 && self.rho.is_finite()) {
            return bad("rho must be at least 1");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return bad("eta must be positive");
            }
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub r1: f64,
    pub r2: f64,
    /// Present for every iteration with `trace` on, else for the last
    /// [`OBJECTIVE_TAIL`] iterations only.
    pub objective: Option<f64>,
    pub mu: f64,
}

/// Iterates of the solver when it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub c: Array2<f64>,
    pub z: Array2<f64>,
    pub g: Array2<f64>,
    pub u1: Array2<f64>,
    pub u2: Array2<f64>,
    pub mu: f64,
    pub iter: usize,
    /// `|y - y c - g|_F / |y|_F`
    pub r1: f64,
    /// `|c - z|_F / max(1, |c|_F)`
    pub r2: f64,
    /// Both residuals reached `tol`; `false` means `max_iter` stopped the run.
    pub converged: bool,
    /// Linearization constant used, if any.
    pub eta: Option<f64>,
    pub objective: f64,
    pub trace: Vec<TraceRow>,
}

impl SolverState {
    pub fn trace_csv(&self) -> String {
        trace_csv(&self.trace)
    }
}

/// Solver trace as CSV, header `iter,r1,r2,objective,mu`; the objective
/// field is empty where it was not evaluated.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("iter,r1,r2,objective,mu\n");
    for row in rows {
        let objective = row
            .objective
            .map(|v| format!("{v:.12e}"))
            .unwrap_or_default();
        writeln!(
            out,
            "{},{:e},{:e},{},{:e}",
            row.iter, row.r1, row.r2, objective, row.mu
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// `|z|_* + alpha |Theta . z|_1 + lambda |y - y z|_{2,1}`: the objective at
/// the feasible point `c = z`, `g = y - y z`. ADMM iterates are slightly
/// infeasible and can sit below the optimum; this value never does.
pub fn objective(
    y: &Array2<f64>,
    z: &Array2<f64>,
    theta: &Theta,
    cfg: &SolverConfig,
) -> Result<f64> {
    let g = y - &y.dot(z);
    let l21: f64 = g
        .columns()
        .into_iter()
        .map(|col| col.dot(&col).sqrt())
        .sum();
    Ok(nuclear_norm(z)? + cfg.alpha * theta.structured_norm(z) + cfg.lambda * l21)
}

/// Plain low-rank representation: the structured solver with `alpha = 0` and
/// an empty pair mask.
pub fn solve_lrr(y: &Measurements, cfg: &SolverConfig) -> Result<SolverState> {
    let cfg = SolverConfig {
        alpha: 0.0,
        ..cfg.clone()
    };
    solve_lrsr_ss(y, &Theta::zeros(y.pixels()), &cfg)
}

pub fn solve_lrsr_ss(y: &Measurements, theta: &Theta, cfg: &SolverConfig) -> Result<SolverState> {
    solve_matrix(y.y(), theta, cfg)
}

/// Solver on a raw data matrix whose columns are the points to represent.
pub fn solve_matrix(y: &Array2<f64>, theta: &Theta, cfg: &SolverConfig) -> Result<SolverState> {
    cfg.validate()?;
    let n = y.ncols();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "self-representation needs at least two columns".into(),
        ));
    }
    if theta.dim() != n {
        return Err(Error::Dimension(format!(
            "theta is {0}x{0}, data has {n} columns",
            theta.dim()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("data matrix is not finite".into()));
    }

    let eta = match cfg.c_step {
        CStep::Exact => None,
        CStep::Linearized => {
            let lipschitz = spectral_norm_estimate(y, 50).powi(2);
            let eta = cfg.eta.unwrap_or(1.02 * (lipschitz + 1.0));
            if eta <= lipschitz {
                return Err(Error::InvalidArgument(format!(
                    "eta = {eta} must exceed |y|_2^2 = {lipschitz}"
                )));
            }
            Some(eta)
        }
    };
    // the weighted l1 term gets its own copy of c unless it vanishes
    let split = cfg.c_step == CStep::Exact && cfg.alpha > 0.0 && !theta.is_zero();
    let normal = match cfg.c_step {
        CStep::Exact => Some(NormalSolver::new(y, if split { 2.0 } else { 1.0 })?),
        CStep::Linearized => None,
    };
    let y_norm = frobenius_norm(y).max(f64::MIN_POSITIVE);
    let yt = y.t().to_owned();

    let mut c = Array2::<f64>::zeros((n, n));
    let mut z = Array2::<f64>::zeros((n, n));
    let mut w = Array2::<f64>::zeros((0, 0));
    let mut g = Array2::<f64>::zeros(y.raw_dim());
    let mut u1 = Array2::<f64>::zeros(y.raw_dim());
    let mut u2 = Array2::<f64>::zeros((n, n));
    let mut u3 = if split {
        Array2::<f64>::zeros((n, n))
    } else {
        Array2::<f64>::zeros((0, 0))
    };
    let mut mu = cfg.mu0;
    let mut trace = Vec::new();
    let mut recent = VecDeque::with_capacity(OBJECTIVE_TAIL);
    let (mut r1, mut r2) = (f64::INFINITY, f64::INFINITY);
    let mut converged = false;
    let mut iter = 0;
    let mut yc = y.dot(&c);

    while iter < cfg.max_iter {
        iter += 1;

        // z-step: nuclear-norm prox, then the zero-diagonal constraint
        let a = &c + &(&u2 / mu);
        z = svt(&a, 1.0 / mu)?;
        z.diag_mut().fill(0.0);

        match (&normal, eta) {
            (Some(normal), _) => {
                if split {
                    w = prox_weighted_l1(&(&c + &(&u3 / mu)), theta, cfg.alpha / mu)?;
                }
                let e_arg = y - &yc + &(&u1 / mu);
                g = prox_l21(&e_arg, cfg.lambda / mu)?;

                // c-step: exact minimizer of the quadratic coupling terms
                let mut target = y - &g;
                target.scaled_add(1.0 / mu, &u1);
                let mut rhs = yt.dot(&target);
                rhs += &z;
                rhs.scaled_add(-1.0 / mu, &u2);
                if split {
                    rhs += &w;
                    rhs.scaled_add(-1.0 / mu, &u3);
                }
                c = normal.solve(&rhs);
                yc = y.dot(&c);
            }
            (None, Some(eta)) => {
                // c-step: linearized gradient of both coupling terms, weighted soft threshold
                let resid = &yc + &g - y - &(&u1 / mu);
                let mut grad = yt.dot(&resid);
                grad += &c;
                grad -= &z;
                grad.scaled_add(1.0 / mu, &u2);
                let step = &c - &(grad / eta);
                c = prox_weighted_l1(&step, theta, cfg.alpha / (mu * eta))?;
                yc = y.dot(&c);

                let e_arg = y - &yc + &(&u1 / mu);
                g = prox_l21(&e_arg, cfg.lambda / mu)?;
            }
            (None, None) => unreachable!("every c-step has its setup"),
        }

        // dual ascent
        let e1 = y - &yc - &g;
        u1.scaled_add(mu, &e1);
        let c_norm = frobenius_norm(&c);
        r1 = frobenius_norm(&e1) / y_norm;
        let mut gap = frobenius_distance(&c, &z);
        u2.scaled_add(mu, &c);
        u2.scaled_add(-mu, &z);
        if split {
            gap = gap.max(frobenius_distance(&c, &w));
            u3.scaled_add(mu, &c);
            u3.scaled_add(-mu, &w);
        }
        r2 = gap / c_norm.max(1.0);

        if !(r1.is_finite() && r2.is_finite() && c_norm.is_finite()) {
            return Err(Error::Divergence {
                iter,
                detail: format!("r1 = {r1}, r2 = {r2}, |c|_F = {c_norm}, mu = {mu}"),
            });
        }

        let objective = if cfg.trace {
            Some(objective(y, &z, theta, cfg)?)
        } else {
            if recent.len() == OBJECTIVE_TAIL {
                recent.pop_front();
            }
            recent.push_back((trace.len(), z.clone()));
            None
        };
        trace.push(TraceRow {
            iter,
            r1,
            r2,
            objective,
            mu,
        });

        mu = (cfg.rho * mu).min(cfg.mu_max);
        if r1.max(r2) <= cfg.tol {
            converged = true;
            break;
        }
    }

    for (row, z) in &recent {
        trace[*row].objective = Some(objective(y, z, theta, cfg)?);
    }
    let objective = match trace.last().and_then(|row| row.objective) {
        Some(v) => v,
        None => objective(y, &z, theta, cfg)?,
    };
    Ok(SolverState {
        c,
        z,
        g,
        u1,
        u2,
        mu,
        iter,
        r1,
        r2,
        converged,
        eta,
        objective,
        trace,
    })
}

/// Solves `(y^T y + m I) x = r` through the `S x S` system
/// `(m I + y y^T)`, which is cheap because `y` has few rows.
struct NormalSolver {
    y: Array2<f64>,
    yt: Array2<f64>,
    inner_inv: Array2<f64>,
    shift: f64,
}

impl NormalSolver {
    fn new(y: &Array2<f64>, shift: f64) -> Result<Self> {
        let s = y.nrows();
        let inner = y.dot(&y.t()) + Array2::<f64>::eye(s) * shift;
        let (values, vectors) = symmetric_eigen(&inner)?;
        let scaled = &vectors / &ndarray::Array1::from(values);
        Ok(Self {
            y: y.clone(),
            yt: y.t().to_owned(),
            inner_inv: scaled.dot(&vectors.t()),
            shift,
        })
    }

    fn solve(&self, r: &Array2<f64>) -> Array2<f64> {
        let correction = self.yt.dot(&self.inner_inv.dot(&self.y.dot(r)));
        (r - &correction) / self.shift
    }
}
