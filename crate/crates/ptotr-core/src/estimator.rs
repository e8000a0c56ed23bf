//! Alternating maximum-likelihood estimation of the CP coefficient tensor.
//!
//! Each factor sub-problem is an instance of the multiplicative kernel in
//! [`crate::mm`]: response factors follow
//!
//! ```text
//! U~(p) <- U~(p) * { sum_i (Y_i_(p) ./ U~(p) G_ip) G_ip^T } ./ { 1 (sum_i w_i)^T }
//! ```
//!
//! with `G_ip = diag(w_i) (KR_{s!=p} U(s))^T` and
//! `w_i = (KR_q V(q))^T vec(X_i)`, and covariate factors follow the
//! rearranged row form built from `W_iq = X_i_(q) KR_{s!=q} V(s)`. Khatri-Rao
//! products are taken in decreasing mode order throughout. The generic
//! problem builders materialize the stacked kernel matrices so the
//! specialized updates can be checked against plain `mm_step`; the fitter
//! itself runs the streaming form.

use crate::mm::{self, MmError, MmProblem};
use crate::par;
use crate::synth;
use crate::tensor::{khatri_rao, CpTensor, DenseTensor, Matrix, TensorError};
use rand::Rng;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("all responses are zero: the covariate-factor MLE does not exist")]
    AllZeroResponses,
    #[error("degenerate rate at observation {observation}, entry {entry}: rate {rate} with positive count")]
    DegenerateRate { observation: usize, entry: usize, rate: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mm(#[from] MmError),
}

/// A PToTR dataset: `I` response tensors paired with covariate tensors of
/// shared shapes. Responses hold non-negative integers; every covariate has
/// at least one strictly positive entry.
#[derive(Debug, Clone)]
pub struct PtotrProblem {
    responses: Vec<DenseTensor>,
    covariates: Vec<DenseTensor>,
}

impl PtotrProblem {
    pub fn new(
        responses: Vec<DenseTensor>,
        covariates: Vec<DenseTensor>,
    ) -> Result<Self, FitError> {
        if responses.is_empty() || responses.len() != covariates.len() {
            return Err(FitError::InvalidProblem(format!(
                "need matching non-empty response/covariate lists, got {} and {}",
                responses.len(),
                covariates.len()
            )));
        }
        let rdims = responses[0].dims().to_vec();
        let xdims = covariates[0].dims().to_vec();
        for (i, (y, x)) in responses.iter().zip(&covariates).enumerate() {
            if y.dims() != rdims || x.dims() != xdims {
                return Err(FitError::InvalidProblem(format!(
                    "observation {} has inconsistent dimensions",
                    i + 1
                )));
            }
            if y.values().iter().any(|&v| v < 0.0 || v.fract() != 0.0 || !v.is_finite()) {
                return Err(FitError::InvalidProblem(format!(
                    "response {} must hold non-negative integers",
                    i + 1
                )));
            }
            if x.values().iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(FitError::InvalidProblem(format!(
                    "covariate {} must be non-negative",
                    i + 1
                )));
            }
            if !x.values().iter().any(|&v| v > 0.0) {
                return Err(FitError::InvalidProblem(format!(
                    "covariate {} is identically zero (min_i ||X_i|| > 0 required)",
                    i + 1
                )));
            }
        }
        Ok(PtotrProblem { responses, covariates })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn responses(&self) -> &[DenseTensor] {
        &self.responses
    }

    pub fn covariates(&self) -> &[DenseTensor] {
        &self.covariates
    }

    pub fn response_dims(&self) -> &[usize] {
        self.responses[0].dims()
    }

    pub fn covariate_dims(&self) -> &[usize] {
        self.covariates[0].dims()
    }
}

/// Parameter-count conventions. `Raw` counts every factor entry,
/// `R (sum N_q + sum M_p)`; `Constrained` removes one column-sum constraint
/// per factor, `R (sum N_q + sum M_p - (P+Q))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamCountConvention {
    Raw,
    Constrained,
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub rank: usize,
    /// Relative loglikelihood change that ends the outer sweep loop.
    pub outer_tol: f64,
    /// Relative objective change that ends each factor sub-solve.
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub outer_max_sweeps: usize,
    pub restarts: usize,
    pub seed: u64,
    pub param_convention: ParamCountConvention,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            rank: 1,
            outer_tol: 1e-6,
            inner_tol: 1e-4,
            inner_max_iter: 50,
            outer_max_sweeps: 500,
            restarts: 10,
            seed: 0,
            param_convention: ParamCountConvention::Raw,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        if self.rank == 0 {
            return Err(FitError::InvalidProblem("rank must be >= 1".into()));
        }
        if !(self.outer_tol > 0.0) || !(self.inner_tol > 0.0) {
            return Err(FitError::InvalidProblem("tolerances must be positive".into()));
        }
        if self.restarts == 0 || self.inner_max_iter == 0 || self.outer_max_sweeps == 0 {
            return Err(FitError::InvalidProblem("iteration budgets must be >= 1".into()));
        }
        Ok(())
    }
}

/// Factor rows whose stacked counts are all zero: the row MLE sits on the
/// constraint-set boundary and decays toward the positivity floor.
#[derive(Debug, Clone)]
pub struct DneWarning {
    /// 1-based response mode.
    pub mode: usize,
    /// 1-based factor rows with zero stacked counts.
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Normalized coefficient estimate (columns sum to one, weights sorted).
    pub coefficient: CpTensor,
    pub loglik: f64,
    /// Loglikelihood at initialization and after each complete sweep.
    pub loglik_trajectory: Vec<f64>,
    pub bic: f64,
    pub param_count: usize,
    pub dne_warnings: Vec<DneWarning>,
    /// Set when the rank exceeds every mode extent.
    pub rank_warning: Option<String>,
    /// Final loglikelihood of every restart, by restart index.
    pub restart_logliks: Vec<f64>,
    /// Selected restart (maximum loglikelihood, ties to the lowest index).
    pub selected_restart: usize,
    pub sweeps: usize,
    pub converged: bool,
    /// Iterate entries clamped at the positivity floor in the winning restart.
    pub floor_hits: usize,
}

/// Identity-link Poisson loglikelihood. The factorial constant enters only on
/// request; zero rates are tolerated wherever the paired count is zero.
pub fn loglikelihood(
    problem: &PtotrProblem,
    b: &CpTensor,
    include_constant: bool,
) -> Result<f64, FitError> {
    check_coefficient_dims(problem, b)?;
    let n = problem.len();
    let partials = par::map_chunks(n, |range| -> Result<f64, FitError> {
        let mut f = 0.0;
        for i in range {
            let rates = b.contract(&problem.covariates[i])?;
            for (e, (&y, &r)) in problem.responses[i]
                .values()
                .iter()
                .zip(rates.values())
                .enumerate()
            {
                if y > 0.0 {
                    if !(r > 0.0) {
                        return Err(FitError::DegenerateRate {
                            observation: i + 1,
                            entry: e + 1,
                            rate: r,
                        });
                    }
                    f += y * r.ln() - r;
                } else {
                    f -= r;
                }
            }
        }
        Ok(f)
    });
    let mut total = 0.0;
    for p in partials {
        total += p?;
    }
    if include_constant {
        let constant = par::sum_chunked(n, |range| {
            range
                .map(|i| {
                    problem.responses[i]
                        .values()
                        .iter()
                        .map(|&y| ln_gamma(y + 1.0))
                        .sum::<f64>()
                })
                .sum()
        });
        total -= constant;
    }
    Ok(total)
}

fn check_coefficient_dims(problem: &PtotrProblem, b: &CpTensor) -> Result<(), FitError> {
    if b.covariate_dims() != problem.covariate_dims()
        || b.response_dims() != problem.response_dims()
    {
        return Err(FitError::InvalidProblem(format!(
            "coefficient dims ({:?} | {:?}) do not match problem dims ({:?} | {:?})",
            b.covariate_dims(),
            b.response_dims(),
            problem.covariate_dims(),
            problem.response_dims()
        )));
    }
    Ok(())
}

/// `w_i = (KR_q V(q))^T vec(X_i)` for every observation, as an R x I matrix.
fn covariate_weights(
    covariate_factors: &[Matrix],
    rank: usize,
    covariates: &[DenseTensor],
) -> Matrix {
    let mats: Vec<&Matrix> = covariate_factors.iter().rev().collect();
    let vkr = khatri_rao(&mats, rank).expect("validated factors");
    let n = covariates.len();
    let cols = par::map_indexed(n, |i| {
        let x = covariates[i].values();
        let mut col = vec![0.0; rank];
        for (c, slot) in col.iter_mut().enumerate() {
            *slot = vkr.col(c).iter().zip(x).map(|(a, b)| a * b).sum();
        }
        col
    });
    let mut w = Matrix::zeros(rank, n);
    for (i, col) in cols.iter().enumerate() {
        w.col_mut(i).copy_from_slice(col);
    }
    w
}

fn kr_omitting(factors: &[Matrix], omit: usize, rank: usize) -> Matrix {
    let mats: Vec<&Matrix> = factors
        .iter()
        .enumerate()
        .rev()
        .filter(|(s, _)| *s != omit)
        .map(|(_, m)| m)
        .collect();
    khatri_rao(&mats, rank).expect("validated factors")
}

fn check_mode(mode: usize, count: usize, what: &str) -> Result<(), FitError> {
    if mode < 1 || mode > count {
        return Err(FitError::InvalidProblem(format!(
            "{what} mode {mode} out of range 1..={count}"
        )));
    }
    Ok(())
}

/// Stacked kernel problem for the mode-`p` response-factor update
/// (1-based `p`): `Y = [Y_1_(p) .. Y_I_(p)]`, `D = [G_1p .. G_Ip]`, iterate
/// `U~(p) = U(p) diag(lambda)`.
pub fn build_response_update(
    problem: &PtotrProblem,
    b: &CpTensor,
    p: usize,
) -> Result<MmProblem, FitError> {
    check_coefficient_dims(problem, b)?;
    check_mode(p, problem.response_dims().len(), "response")?;
    let r = b.rank();
    let w = covariate_weights(b.covariate_factors(), r, &problem.covariates);
    let kr_mp = kr_omitting(b.response_factors(), p - 1, r);
    let m_p = problem.response_dims()[p - 1];
    let m_rest = kr_mp.rows();
    let n = problem.len();
    let mut y = Matrix::zeros(m_p, m_rest * n);
    let mut d = Matrix::zeros(r, m_rest * n);
    for i in 0..n {
        let yi = problem.responses[i].matricize(p)?;
        for col in 0..m_rest {
            y.col_mut(i * m_rest + col).copy_from_slice(yi.col(col));
            let dcol = d.col_mut(i * m_rest + col);
            for (k, slot) in dcol.iter_mut().enumerate() {
                *slot = w.get(k, i) * kr_mp.get(col, k);
            }
        }
    }
    let c_init = b.response_factors()[p - 1].mul_diag(b.weights());
    Ok(MmProblem::new(y, d, c_init)?)
}

/// Row-form kernel problem for the mode-`q` covariate-factor update
/// (1-based `q`): `Y = [vec(Y_1)^T .. vec(Y_I)^T]` as one row,
/// `D = [H_1q^T .. H_Iq^T]`, iterate `vec(V~(q))^T` with `n_q` fastest.
pub fn build_covariate_update(
    problem: &PtotrProblem,
    b: &CpTensor,
    q: usize,
) -> Result<MmProblem, FitError> {
    check_coefficient_dims(problem, b)?;
    check_mode(q, problem.covariate_dims().len(), "covariate")?;
    let r = b.rank();
    let ukr = b.response_khatri_rao();
    let kr_nq = kr_omitting(b.covariate_factors(), q - 1, r);
    let n_q = problem.covariate_dims()[q - 1];
    let m: usize = problem.response_dims().iter().product();
    let n = problem.len();
    let mut y = Matrix::zeros(1, m * n);
    let mut d = Matrix::zeros(r * n_q, m * n);
    for i in 0..n {
        let w_iq = problem.covariates[i].matricize(q)?.matmul(&kr_nq);
        for e in 0..m {
            y.set(0, i * m + e, problem.responses[i].values()[e]);
            let dcol = d.col_mut(i * m + e);
            for rr in 0..r {
                let u = ukr.get(e, rr);
                for nq in 0..n_q {
                    dcol[nq + rr * n_q] = u * w_iq.get(nq, rr);
                }
            }
        }
    }
    let vt = b.covariate_factors()[q - 1].mul_diag(b.weights());
    let mut c_init = Matrix::zeros(1, r * n_q);
    for rr in 0..r {
        for nq in 0..n_q {
            c_init.set(0, nq + rr * n_q, vt.get(nq, rr));
        }
    }
    Ok(MmProblem::new(y, d, c_init)?)
}

// ---------------------------------------------------------------------------
// Streaming factor sub-solves shared by `fit` and the single-step functions.
// ---------------------------------------------------------------------------

/// Objective at `ut` plus the update numerator for response mode p.
/// `my_p[i]` is `Y_i` matricized at mode p.
fn response_pass(
    ut: &Matrix,
    my_p: &[Matrix],
    kr_mp: &Matrix,
    w: &Matrix,
) -> Result<(f64, Matrix), FitError> {
    let (m_p, r) = (ut.rows(), ut.cols());
    let m_rest = kr_mp.rows();
    let n = my_p.len();
    let partials = par::map_chunks(n, |range| -> Result<(f64, Matrix), FitError> {
        let mut f = 0.0;
        let mut numer = Matrix::zeros(m_p, r);
        let mut scaled = vec![0.0; m_p * r];
        let mut rates = vec![0.0; m_p];
        let mut ratio = vec![0.0; m_p * m_rest];
        for i in range {
            let wi = w.col(i);
            for (c, &wv) in wi.iter().enumerate() {
                for row in 0..m_p {
                    scaled[row + c * m_p] = ut.get(row, c) * wv;
                }
            }
            let yi = &my_p[i];
            for col in 0..m_rest {
                rates.fill(0.0);
                for c in 0..r {
                    let k = kr_mp.get(col, c);
                    for (row, rate) in rates.iter_mut().enumerate() {
                        *rate += scaled[row + c * m_p] * k;
                    }
                }
                let ycol = yi.col(col);
                for row in 0..m_p {
                    let y = ycol[row];
                    let rate = rates[row];
                    if y > 0.0 {
                        if !(rate > 0.0) {
                            return Err(FitError::DegenerateRate {
                                observation: i + 1,
                                entry: row + 1,
                                rate,
                            });
                        }
                        f += y * rate.ln() - rate;
                        ratio[row + col * m_p] = y / rate;
                    } else {
                        f -= rate;
                        ratio[row + col * m_p] = 0.0;
                    }
                }
            }
            for c in 0..r {
                let wv = wi[c];
                let ncol = numer.col_mut(c);
                for col in 0..m_rest {
                    let k = kr_mp.get(col, c) * wv;
                    if k == 0.0 {
                        continue;
                    }
                    let base = col * m_p;
                    for (row, slot) in ncol.iter_mut().enumerate() {
                        *slot += ratio[base + row] * k;
                    }
                }
            }
        }
        Ok((f, numer))
    });
    let mut f = 0.0;
    let mut numer = Matrix::zeros(m_p, r);
    for part in partials {
        let (pf, pn) = part?;
        f += pf;
        for (a, &b) in numer.data_mut().iter_mut().zip(pn.data()) {
            *a += b;
        }
    }
    Ok((f, numer))
}

/// Objective at `vt` plus the update numerator for covariate mode q.
/// `w_iq[i] = X_i_(q) KR_{s!=q} V(s)` and `ukr = KR_p U(p)`.
fn covariate_pass(
    vt: &Matrix,
    responses: &[DenseTensor],
    w_iq: &[Matrix],
    ukr: &Matrix,
) -> Result<(f64, Matrix), FitError> {
    let (n_q, r) = (vt.rows(), vt.cols());
    let m = ukr.rows();
    let n = responses.len();
    let partials = par::map_chunks(n, |range| -> Result<(f64, Matrix), FitError> {
        let mut f = 0.0;
        let mut numer = Matrix::zeros(n_q, r);
        let mut s = vec![0.0; r];
        let mut t = vec![0.0; r];
        let mut rates = vec![0.0; m];
        for i in range {
            let wi = &w_iq[i];
            for (c, slot) in s.iter_mut().enumerate() {
                *slot = wi.col(c).iter().zip(vt.col(c)).map(|(a, b)| a * b).sum();
            }
            rates.fill(0.0);
            for (c, &sv) in s.iter().enumerate() {
                if sv == 0.0 {
                    continue;
                }
                for (rate, &u) in rates.iter_mut().zip(ukr.col(c)) {
                    *rate += u * sv;
                }
            }
            let y = responses[i].values();
            t.fill(0.0);
            for (e, (&yv, &rate)) in y.iter().zip(&rates).enumerate() {
                if yv > 0.0 {
                    if !(rate > 0.0) {
                        return Err(FitError::DegenerateRate {
                            observation: i + 1,
                            entry: e + 1,
                            rate,
                        });
                    }
                    f += yv * rate.ln() - rate;
                    let ratio = yv / rate;
                    for (c, slot) in t.iter_mut().enumerate() {
                        *slot += ukr.get(e, c) * ratio;
                    }
                } else {
                    f -= rate;
                }
            }
            for (c, &tv) in t.iter().enumerate() {
                if tv == 0.0 {
                    continue;
                }
                for (slot, &wv) in numer.col_mut(c).iter_mut().zip(wi.col(c)) {
                    *slot += wv * tv;
                }
            }
        }
        Ok((f, numer))
    });
    let mut f = 0.0;
    let mut numer = Matrix::zeros(n_q, r);
    for part in partials {
        let (pf, pn) = part?;
        f += pf;
        for (a, &b) in numer.data_mut().iter_mut().zip(pn.data()) {
            *a += b;
        }
    }
    Ok((f, numer))
}

/// Multiplicative update with a column-constant denominator; returns the
/// number of entries clamped at the positivity floor.
fn apply_update_cols(iterate: &mut Matrix, numer: &Matrix, denom: &[f64]) -> usize {
    let mut floor_hits = 0;
    for c in 0..iterate.cols() {
        let d = denom[c];
        for (v, &nm) in iterate.col_mut(c).iter_mut().zip(numer.col(c)) {
            let mut next = *v * nm / d;
            if next < mm::POSITIVITY_FLOOR {
                next = mm::POSITIVITY_FLOOR;
                floor_hits += 1;
            }
            *v = next;
        }
    }
    floor_hits
}

/// Multiplicative update with an element-wise denominator. Entries whose
/// denominator is zero receive no covariate mass at all and are left
/// untouched.
fn apply_update_elem(iterate: &mut Matrix, numer: &Matrix, denom: &Matrix) -> usize {
    let mut floor_hits = 0;
    for c in 0..iterate.cols() {
        for ((v, &nm), &dn) in iterate
            .col_mut(c)
            .iter_mut()
            .zip(numer.col(c))
            .zip(denom.col(c))
        {
            if dn <= 0.0 {
                continue;
            }
            let mut next = *v * nm / dn;
            if next < mm::POSITIVITY_FLOOR {
                next = mm::POSITIVITY_FLOOR;
                floor_hits += 1;
            }
            *v = next;
        }
    }
    floor_hits
}

/// One specialized multiplicative update of `U~(p) = U(p) diag(lambda)`.
pub fn response_update_step(
    problem: &PtotrProblem,
    b: &CpTensor,
    p: usize,
) -> Result<Matrix, FitError> {
    check_coefficient_dims(problem, b)?;
    check_mode(p, problem.response_dims().len(), "response")?;
    let r = b.rank();
    let w = covariate_weights(b.covariate_factors(), r, &problem.covariates);
    let kr_mp = kr_omitting(b.response_factors(), p - 1, r);
    let my_p: Vec<Matrix> = problem
        .responses
        .iter()
        .map(|y| y.matricize(p))
        .collect::<Result<_, _>>()?;
    let mut ut = b.response_factors()[p - 1].mul_diag(b.weights());
    let sum_w = w.row_sums();
    let (_, numer) = response_pass(&ut, &my_p, &kr_mp, &w)?;
    apply_update_cols(&mut ut, &numer, &sum_w);
    Ok(ut)
}

/// One specialized multiplicative update of `V~(q) = V(q) diag(lambda)`.
pub fn covariate_update_step(
    problem: &PtotrProblem,
    b: &CpTensor,
    q: usize,
) -> Result<Matrix, FitError> {
    check_coefficient_dims(problem, b)?;
    check_mode(q, problem.covariate_dims().len(), "covariate")?;
    let r = b.rank();
    let ukr = b.response_khatri_rao();
    let kr_nq = kr_omitting(b.covariate_factors(), q - 1, r);
    let w_iq: Vec<Matrix> = problem
        .covariates
        .iter()
        .map(|x| Ok(x.matricize(q)?.matmul(&kr_nq)))
        .collect::<Result<_, FitError>>()?;
    let mut sum_w = Matrix::zeros(w_iq[0].rows(), r);
    for wm in &w_iq {
        for (a, &b) in sum_w.data_mut().iter_mut().zip(wm.data()) {
            *a += b;
        }
    }
    let mut vt = b.covariate_factors()[q - 1].mul_diag(b.weights());
    let (_, numer) = covariate_pass(&vt, &problem.responses, &w_iq, &ukr)?;
    apply_update_elem(&mut vt, &numer, &sum_w);
    Ok(vt)
}

// ---------------------------------------------------------------------------
// The alternating fit.
// ---------------------------------------------------------------------------

struct SingleFit {
    state: CpTensor,
    loglik: f64,
    trajectory: Vec<f64>,
    metric_trajectory: Vec<f64>,
    sweeps: usize,
    converged: bool,
    floor_hits: usize,
}

fn extract_lambda(iterate: &Matrix) -> (Vec<f64>, Matrix) {
    let lambda = iterate.col_sums();
    let mut factor = iterate.clone();
    for (c, &l) in lambda.iter().enumerate() {
        factor.scale_col(c, 1.0 / l);
    }
    (lambda, factor)
}

fn run_single_start(
    problem: &PtotrProblem,
    cfg: &FitConfig,
    restart: usize,
    my: &[Vec<Matrix>],
    metric: Option<&(dyn Fn(&CpTensor) -> f64 + Sync)>,
) -> Result<SingleFit, FitError> {
    let r = cfg.rank;
    let p_modes = problem.response_dims().len();
    let q_modes = problem.covariate_dims().len();
    let mut rng = synth::rng_for(cfg.seed, "restart", restart as u64);
    let sample_factor = |rng: &mut rand_chacha::ChaCha8Rng, rows: usize| {
        Matrix::from_fn(rows, r, |_, _| rng.random_range(0.1..1.0))
    };
    let cov: Vec<Matrix> = problem
        .covariate_dims()
        .iter()
        .map(|&n| sample_factor(&mut rng, n))
        .collect();
    let resp: Vec<Matrix> = problem
        .response_dims()
        .iter()
        .map(|&n| sample_factor(&mut rng, n))
        .collect();
    let mut state = CpTensor::new(vec![1.0; r], cov, resp)?.normalized()?;

    let mut floor_hits = 0usize;
    let mut loglik = loglikelihood(problem, &state, false)?;
    let mut trajectory = vec![loglik];
    let mut metric_trajectory = Vec::new();
    if let Some(metric) = metric {
        metric_trajectory.push(metric(&state));
    }
    let mut sweeps = 0;
    let mut converged = false;

    while sweeps < cfg.outer_max_sweeps {
        let mut lambda = state.weights().to_vec();
        let mut vfac = state.covariate_factors().to_vec();
        let mut ufac = state.response_factors().to_vec();

        // Response-factor updates. The covariate weights depend only on the
        // V factors, which are fixed throughout the p loop.
        let w = covariate_weights(&vfac, r, &problem.covariates);
        let sum_w = w.row_sums();
        for p in 0..p_modes {
            let kr_mp = kr_omitting(&ufac, p, r);
            let mut ut = ufac[p].mul_diag(&lambda);
            let my_p = &my[p];
            let (mut f_prev, mut numer) = response_pass(&ut, my_p, &kr_mp, &w)?;
            for k in 0..cfg.inner_max_iter {
                floor_hits += apply_update_cols(&mut ut, &numer, &sum_w);
                if k + 1 == cfg.inner_max_iter {
                    break;
                }
                let (f, nm) = response_pass(&ut, my_p, &kr_mp, &w)?;
                numer = nm;
                let rel = (f - f_prev).abs() / f_prev.abs().max(1e-12);
                f_prev = f;
                if rel < cfg.inner_tol {
                    break;
                }
            }
            let (new_lambda, new_u) = extract_lambda(&ut);
            lambda = new_lambda;
            ufac[p] = new_u;
        }

        // Covariate-factor updates. The response Khatri-Rao is fixed
        // throughout the q loop.
        let ukr = {
            let mats: Vec<&Matrix> = ufac.iter().rev().collect();
            khatri_rao(&mats, r)?
        };
        for q in 0..q_modes {
            let kr_nq = kr_omitting(&vfac, q, r);
            let w_iq: Vec<Matrix> = par::map_indexed(problem.len(), |i| {
                problem.covariates[i]
                    .matricize(q + 1)
                    .expect("validated dims")
                    .matmul(&kr_nq)
            });
            let mut sum_w_q = Matrix::zeros(w_iq[0].rows(), r);
            for wm in &w_iq {
                for (a, &b) in sum_w_q.data_mut().iter_mut().zip(wm.data()) {
                    *a += b;
                }
            }
            let mut vt = vfac[q].mul_diag(&lambda);
            let (mut f_prev, mut numer) =
                covariate_pass(&vt, &problem.responses, &w_iq, &ukr)?;
            for k in 0..cfg.inner_max_iter {
                floor_hits += apply_update_elem(&mut vt, &numer, &sum_w_q);
                if k + 1 == cfg.inner_max_iter {
                    break;
                }
                let (f, nm) = covariate_pass(&vt, &problem.responses, &w_iq, &ukr)?;
                numer = nm;
                let rel = (f - f_prev).abs() / f_prev.abs().max(1e-12);
                f_prev = f;
                if rel < cfg.inner_tol {
                    break;
                }
            }
            let (new_lambda, new_v) = extract_lambda(&vt);
            lambda = new_lambda;
            vfac[q] = new_v;
        }

        sweeps += 1;
        state = CpTensor::new(lambda, vfac, ufac)?.normalized()?;
        let new_loglik = loglikelihood(problem, &state, false)?;
        trajectory.push(new_loglik);
        if let Some(metric) = metric {
            metric_trajectory.push(metric(&state));
        }
        let rel = (new_loglik - loglik).abs() / loglik.abs().max(1e-12);
        loglik = new_loglik;
        if rel < cfg.outer_tol {
            converged = true;
            break;
        }
    }

    Ok(SingleFit { state, loglik, trajectory, metric_trajectory, sweeps, converged, floor_hits })
}

fn dne_prechecks(problem: &PtotrProblem) -> Result<Vec<DneWarning>, FitError> {
    let any_count = problem
        .responses
        .iter()
        .any(|y| y.values().iter().any(|&v| v > 0.0));
    if !any_count {
        return Err(FitError::AllZeroResponses);
    }
    let mut warnings = Vec::new();
    for p in 1..=problem.response_dims().len() {
        let mut sums = vec![0.0; problem.response_dims()[p - 1]];
        for y in &problem.responses {
            let m = y.matricize(p)?;
            for (s, v) in sums.iter_mut().zip(m.row_sums()) {
                *s += v;
            }
        }
        let rows: Vec<usize> = sums
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 0.0)
            .map(|(i, _)| i + 1)
            .collect();
        if !rows.is_empty() {
            warnings.push(DneWarning { mode: p, rows });
        }
    }
    Ok(warnings)
}

/// Algorithm-1 multi-start estimation.
pub fn fit(problem: &PtotrProblem, cfg: &FitConfig) -> Result<FitResult, FitError> {
    fit_with_metric(problem, cfg, None).map(|(res, _)| res)
}

/// [`fit`] plus an auxiliary per-sweep metric (evaluated on the normalized
/// state after every sweep, starting at initialization) for the winning
/// restart.
pub fn fit_with_metric(
    problem: &PtotrProblem,
    cfg: &FitConfig,
    metric: Option<&(dyn Fn(&CpTensor) -> f64 + Sync)>,
) -> Result<(FitResult, Vec<f64>), FitError> {
    cfg.validate()?;
    let dne_warnings = dne_prechecks(problem)?;
    let max_extent = problem
        .covariate_dims()
        .iter()
        .chain(problem.response_dims())
        .copied()
        .max()
        .unwrap_or(1);
    let rank_warning = (cfg.rank > max_extent).then(|| {
        format!(
            "rank {} exceeds every mode extent (max {}); the model is over-parameterized",
            cfg.rank, max_extent
        )
    });
    let p_modes = problem.response_dims().len();
    let my: Vec<Vec<Matrix>> = (0..p_modes)
        .map(|p| {
            problem
                .responses
                .iter()
                .map(|y| y.matricize(p + 1))
                .collect::<Result<_, _>>()
        })
        .collect::<Result<_, TensorError>>()?;

    let singles = par::map_indexed(cfg.restarts, |k| {
        run_single_start(problem, cfg, k, &my, metric)
    });
    let mut fits = Vec::with_capacity(cfg.restarts);
    for s in singles {
        fits.push(s?);
    }
    let restart_logliks: Vec<f64> = fits.iter().map(|f| f.loglik).collect();
    let mut best = 0;
    for (k, f) in fits.iter().enumerate() {
        if f.loglik > fits[best].loglik {
            best = k;
        }
    }
    let winner = fits.swap_remove(best);
    let param_count = parameter_count(
        problem.covariate_dims(),
        problem.response_dims(),
        cfg.rank,
        cfg.param_convention,
    );
    let m_total: usize = problem.response_dims().iter().product();
    let n_obs = problem.len() * m_total;
    let result = FitResult {
        loglik: winner.loglik,
        bic: bic(winner.loglik, param_count, n_obs),
        param_count,
        coefficient: winner.state,
        loglik_trajectory: winner.trajectory,
        dne_warnings,
        rank_warning,
        restart_logliks,
        selected_restart: best,
        sweeps: winner.sweeps,
        converged: winner.converged,
        floor_hits: winner.floor_hits,
    };
    Ok((result, winner.metric_trajectory))
}

/// `k ln(n) - 2 l`.
pub fn bic(loglik: f64, param_count: usize, n_obs: usize) -> f64 {
    assert!(n_obs >= 1, "BIC needs at least one observation");
    param_count as f64 * (n_obs as f64).ln() - 2.0 * loglik
}

/// Parameter count of the rank-R CP coefficient under the given convention.
pub fn parameter_count(
    covariate_dims: &[usize],
    response_dims: &[usize],
    rank: usize,
    convention: ParamCountConvention,
) -> usize {
    if rank == 0 {
        return 0;
    }
    let sum: usize = covariate_dims.iter().chain(response_dims).sum();
    match convention {
        ParamCountConvention::Raw => rank * sum,
        ParamCountConvention::Constrained => {
            rank * (sum - covariate_dims.len() - response_dims.len())
        }
    }
}
