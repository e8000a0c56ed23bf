//! Multiplicative majorization-minimization kernel.
//!
//! Maximizes `f(C) = 1^T { Y * log(CD) - CD } 1` over strictly positive
//! `C` (J x R) for fixed counts `Y` (J x L) and design `D` (R x L) via
//!
//! ```text
//! C <- C * { (Y ./ CD) D^T } ./ { 1 1^T D^T }
//! ```
//!
//! which never decreases `f`. The same kernel serves as the full-rank
//! identity-link Poisson regression solver, the ML-EM reconstruction step,
//! and the inner engine of the alternating CP factor updates.
//!
//! The update is stated for strictly positive designs; structural zeros in
//! `D` are accepted as long as every row and column of `D` keeps a positive
//! sum, which is what the factor-update constructions can produce.

use crate::par;
use crate::tensor::Matrix;
use thiserror::Error;

/// Positivity floor applied to iterate entries after each step. Guards
/// against floating-point underflow to exact zero; every clamped entry is
/// counted and reported, never silently absorbed.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

/// Default relative-change tolerance on the objective.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Error)]
pub enum MmError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("degenerate rate: (CD)[{row},{col}] = {rate} with count {count}; objective is -inf")]
    DegenerateRate { row: usize, col: usize, rate: f64, count: f64 },
    #[error("iterate must be strictly positive")]
    NonPositiveIterate,
}

/// A kernel problem instance: counts `y` (J x L), fixed design `d`
/// (R x L) and a strictly positive starting iterate `c_init` (J x R).
#[derive(Debug, Clone)]
pub struct MmProblem {
    y: Matrix,
    d: Matrix,
    c_init: Matrix,
}

impl MmProblem {
    pub fn new(y: Matrix, d: Matrix, c_init: Matrix) -> Result<Self, MmError> {
        if y.cols() != d.cols() {
            return Err(MmError::InvalidProblem(format!(
                "y has {} columns but d has {}",
                y.cols(),
                d.cols()
            )));
        }
        if c_init.rows() != y.rows() || c_init.cols() != d.rows() {
            return Err(MmError::InvalidProblem(format!(
                "c_init is {}x{}, expected {}x{}",
                c_init.rows(),
                c_init.cols(),
                y.rows(),
                d.rows()
            )));
        }
        if y.data().iter().any(|&v| v < 0.0 || v.fract() != 0.0 || !v.is_finite()) {
            return Err(MmError::InvalidProblem(
                "y entries must be non-negative integers".into(),
            ));
        }
        if d.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(MmError::InvalidProblem("d entries must be non-negative".into()));
        }
        if d.row_sums().iter().any(|&s| !(s > 0.0)) {
            return Err(MmError::InvalidProblem("every row of d needs a positive sum".into()));
        }
        if d.col_sums().iter().any(|&s| !(s > 0.0)) {
            return Err(MmError::InvalidProblem(
                "every column of d needs a positive sum".into(),
            ));
        }
        if c_init.data().iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(MmError::NonPositiveIterate);
        }
        Ok(MmProblem { y, d, c_init })
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn d(&self) -> &Matrix {
        &self.d
    }

    pub fn c_init(&self) -> &Matrix {
        &self.c_init
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.y.rows(), self.d.rows(), self.y.cols())
    }
}

/// Solve outcome. The objective trajectory holds `f` at the initial iterate
/// followed by `f` after each step, and is non-decreasing up to a 1e-8
/// relative tolerance.
#[derive(Debug, Clone)]
pub struct MmResult {
    pub c: Matrix,
    pub objective_trajectory: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of entries clamped by the positivity floor across all steps.
    pub floor_hits: usize,
}

fn objective_from_rates(y: &Matrix, rates: &Matrix) -> Result<f64, MmError> {
    let (j, l) = (y.rows(), y.cols());
    let mut f = 0.0;
    for col in 0..l {
        let yc = y.col(col);
        let rc = rates.col(col);
        for row in 0..j {
            let (yv, rv) = (yc[row], rc[row]);
            if yv > 0.0 {
                if !(rv > 0.0) {
                    return Err(MmError::DegenerateRate {
                        row: row + 1,
                        col: col + 1,
                        rate: rv,
                        count: yv,
                    });
                }
                f += yv * rv.ln() - rv;
            } else {
                f -= rv;
            }
        }
    }
    Ok(f)
}

/// `f(C) = sum_{j,l} [ y_{jl} log((CD)_{jl}) - (CD)_{jl} ]`, with the
/// convention `0 * log(r) = 0` whenever `y_{jl} = 0`.
pub fn mm_objective(c: &Matrix, p: &MmProblem) -> Result<f64, MmError> {
    if c.data().iter().any(|&v| !(v > 0.0)) {
        return Err(MmError::NonPositiveIterate);
    }
    let rates = c.matmul(p.d());
    objective_from_rates(p.y(), &rates)
}

fn step_from_rates(
    c: &Matrix,
    p: &MmProblem,
    rates: &Matrix,
) -> Result<(Matrix, usize), MmError> {
    let (j, r, l) = (c.rows(), c.cols(), p.y().cols());
    // ratio = Y ./ (CD), with 0 ./ positive = 0.
    let mut ratio = Matrix::zeros(j, l);
    for col in 0..l {
        let yc = p.y().col(col);
        let rc = rates.col(col);
        let out = ratio.col_mut(col);
        for row in 0..j {
            let yv = yc[row];
            if yv > 0.0 {
                let rv = rc[row];
                if !(rv > 0.0) {
                    return Err(MmError::DegenerateRate {
                        row: row + 1,
                        col: col + 1,
                        rate: rv,
                        count: yv,
                    });
                }
                out[row] = yv / rv;
            }
        }
    }
    let numer = ratio.matmul(&p.d().transpose());
    let denom = p.d().row_sums();
    let mut next = Matrix::zeros(j, r);
    let mut floor_hits = 0;
    for col in 0..r {
        let dcol = denom[col];
        let ncol = numer.col(col);
        let ccol = c.col(col);
        let out = next.col_mut(col);
        for row in 0..j {
            let mut v = ccol[row] * ncol[row] / dcol;
            if v < POSITIVITY_FLOOR {
                v = POSITIVITY_FLOOR;
                floor_hits += 1;
            }
            out[row] = v;
        }
    }
    Ok((next, floor_hits))
}

/// One multiplicative update `C * Phi(C)`. Entries that would underflow the
/// positivity floor are clamped to it.
pub fn mm_step(c: &Matrix, p: &MmProblem) -> Result<Matrix, MmError> {
    if c.data().iter().any(|&v| !(v > 0.0)) {
        return Err(MmError::NonPositiveIterate);
    }
    let rates = c.matmul(p.d());
    Ok(step_from_rates(c, p, &rates)?.0)
}

/// Iterate [`mm_step`] from `c_init` until the relative objective change
/// drops below `tol` or `max_iter` steps have been taken.
pub fn mm_solve(p: &MmProblem, tol: f64, max_iter: usize) -> Result<MmResult, MmError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let mut c = p.c_init().clone();
    let mut rates = c.matmul(p.d());
    let mut f = objective_from_rates(p.y(), &rates)?;
    let mut trajectory = vec![f];
    let mut floor_hits = 0;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..max_iter {
        let (next, hits) = step_from_rates(&c, p, &rates)?;
        c = next;
        floor_hits += hits;
        iterations += 1;
        rates = c.matmul(p.d());
        let f_new = objective_from_rates(p.y(), &rates)?;
        trajectory.push(f_new);
        let rel = (f_new - f).abs() / f.abs().max(1e-12);
        f = f_new;
        if rel < tol {
            converged = true;
            break;
        }
    }
    Ok(MmResult { c, objective_trajectory: trajectory, iterations, converged, floor_hits })
}

/// Row-wise MLE existence: entry `j` is `false` iff row `j` of `y` is all
/// zeros, in which case the maximizer sits on the boundary `c_j = 0` outside
/// the constraint set.
pub fn check_mle_exists(y: &Matrix) -> Vec<bool> {
    let sums = y.row_sums();
    sums.iter().map(|&s| s > 0.0).collect()
}

/// Probability that the MLE for row `j` does not exist under
/// `Y ~ Poisson(c_j^T D)` element-wise: `exp(-c_j^T D 1)`.
pub fn dne_probability(c_row: &[f64], d: &Matrix) -> f64 {
    let row_sums = d.row_sums();
    let total: f64 = c_row.iter().zip(&row_sums).map(|(c, s)| c * s).sum();
    (-total).exp()
}

/// Deterministic chunk-parallel evaluation of the objective for large
/// problems; used by callers that already hold the rate matrix.
pub fn objective_from_rates_par(y: &Matrix, rates: &Matrix) -> Result<f64, MmError> {
    let l = y.cols();
    let partials = par::map_chunks(l, |range| -> Result<f64, MmError> {
        let mut f = 0.0;
        for col in range {
            let yc = y.col(col);
            let rc = rates.col(col);
            for (row, (&yv, &rv)) in yc.iter().zip(rc).enumerate() {
                if yv > 0.0 {
                    if !(rv > 0.0) {
                        return Err(MmError::DegenerateRate {
                            row: row + 1,
                            col: col + 1,
                            rate: rv,
                            count: yv,
                        });
                    }
                    f += yv * rv.ln() - rv;
                } else {
                    f -= rv;
                }
            }
        }
        Ok(f)
    });
    let mut total = 0.0;
    for p in partials {
        total += p?;
    }
    Ok(total)
}
