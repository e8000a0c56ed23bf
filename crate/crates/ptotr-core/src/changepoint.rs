//! Likelihood-ratio change-point detection on count-tensor series.
//!
//! A change at time `tau` splits the series into two groups with constant
//! Poisson mean tensors; with indicator covariates `[1,0]` / `[0,1]` this is
//! a two-level Poisson tensor ANOVA whose CP coefficient has one 2-row
//! covariate factor. The binary covariates collapse the data to the group
//! sums `Y1 = sum_{t<=tau} Y_t`, `Y2 = sum_{t>tau} Y_t` and the factor
//! updates simplify accordingly:
//!
//! ```text
//! V~ row j  <- V~ row j * [ (vec(Yj) ./ U vj~)^T U ] / tau_j
//! U~(p)     <- U~(p) * { sum_j (Yj_(p) ./ U~(p) G_jp) G_jp^T } ./ { 1 w^T }
//! ```
//!
//! with `G_jp = diag(v_j) U_{-p}^T` and `w = tau_1 v_1 + tau_2 v_2`. The
//! scan fits every candidate `tau` plus the no-change null and reports
//! `tau_hat = argmax ell_tau` with `Lambda_tau = 2 (ell_tau - ell_0)`.

use crate::mm;
use crate::par;
use crate::synth;
use crate::tensor::{khatri_rao, CpTensor, DenseTensor, Matrix, TensorError};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChangePointError {
    #[error("series must contain at least two steps, got {0}")]
    SeriesTooShort(usize),
    #[error("candidate set empty or out of range 1..={max}: {got:?}")]
    BadCandidates { max: usize, got: Vec<usize> },
    #[error("series tensors must share dimensions")]
    InconsistentDims,
    #[error("series holds non-count values")]
    NotCounts,
    #[error("all series entries are zero: the MLE does not exist")]
    AllZeroSeries,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Configuration of one PTANOVA fit inside the scan.
#[derive(Debug, Clone)]
pub struct PtanovaConfig {
    pub rank: usize,
    pub outer_tol: f64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub outer_max_sweeps: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for PtanovaConfig {
    fn default() -> Self {
        PtanovaConfig {
            rank: 4,
            outer_tol: 1e-6,
            inner_tol: 1e-4,
            inner_max_iter: 20,
            outer_max_sweeps: 100,
            restarts: 10,
            seed: 0,
        }
    }
}

/// Best fit of one grouped PTANOVA model.
#[derive(Debug, Clone)]
pub struct PtanovaFit {
    /// Coefficient with the group factor as the single covariate mode.
    pub coefficient: CpTensor,
    pub loglik: f64,
    pub trajectory: Vec<f64>,
    pub restart_logliks: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ChangePointResult {
    pub tau_hat: usize,
    /// `(tau, ell_tau)` in candidate order.
    pub loglik_by_tau: Vec<(usize, f64)>,
    pub null_loglik: f64,
    /// `(tau, Lambda_tau = 2 (ell_tau - ell_0))`.
    pub lambda_by_tau: Vec<(usize, f64)>,
    pub fits: Vec<PtanovaFit>,
    pub null_fit: PtanovaFit,
}

/// Grouped sufficient statistics: per-group count sums and group sizes.
struct Grouped<'a> {
    sums: &'a [DenseTensor],
    sizes: &'a [usize],
}

/// Loglikelihood of the grouped model at the given state. Equal to the full
/// per-step Poisson loglikelihood (constant excluded): each group contributes
/// `sum_m [ Yj_m log(rate_j_m) - tau_j rate_j_m ]`.
fn grouped_loglik(g: &Grouped, lambda: &[f64], v: &Matrix, ukr: &Matrix) -> f64 {
    let r = lambda.len();
    let mut total = 0.0;
    for (j, sum) in g.sums.iter().enumerate() {
        let tau_j = g.sizes[j] as f64;
        let mut scale = vec![0.0; r];
        for (c, s) in scale.iter_mut().enumerate() {
            *s = lambda[c] * v.get(j, c);
        }
        for (e, &y) in sum.values().iter().enumerate() {
            let mut rate = 0.0;
            for c in 0..r {
                rate += ukr.get(e, c) * scale[c];
            }
            if y > 0.0 {
                total += y * rate.ln();
            }
            total -= tau_j * rate;
        }
    }
    total
}

/// One simplified response-factor update of `U~(p) = U(p) diag(lambda)`
/// given the grouped sums. Exposed for the equivalence checks against the
/// generic kernel step.
pub fn simplified_response_step(
    sums: &[DenseTensor],
    sizes: &[usize],
    b: &CpTensor,
    p: usize,
) -> Result<Matrix, ChangePointError> {
    let g = Grouped { sums, sizes };
    let r = b.rank();
    let v = &b.covariate_factors()[0];
    let kr_mp: Vec<&Matrix> = b
        .response_factors()
        .iter()
        .enumerate()
        .rev()
        .filter(|(s, _)| *s != p - 1)
        .map(|(_, m)| m)
        .collect();
    let kr_mp = khatri_rao(&kr_mp, r)?;
    let my: Vec<Matrix> = g
        .sums
        .iter()
        .map(|y| y.matricize(p))
        .collect::<Result<_, _>>()?;
    let mut ut = b.response_factors()[p - 1].mul_diag(b.weights());
    let w: Vec<f64> = (0..r)
        .map(|c| {
            g.sizes
                .iter()
                .enumerate()
                .map(|(j, &n)| n as f64 * v.get(j, c))
                .sum()
        })
        .collect();
    let (_, numer) = response_pass_grouped(&ut, &my, &kr_mp, v, g.sizes);
    apply_floor_update(&mut ut, &numer, |_, c| w[c]);
    Ok(ut)
}

/// One simplified covariate-factor update of `V~ = V diag(lambda)`.
pub fn simplified_covariate_step(
    sums: &[DenseTensor],
    sizes: &[usize],
    b: &CpTensor,
) -> Result<Matrix, ChangePointError> {
    let ukr = b.response_khatri_rao();
    let mut vt = b.covariate_factors()[0].mul_diag(b.weights());
    let (_, numer) = covariate_pass_grouped(&vt, sums, &ukr, sizes);
    apply_floor_update(&mut vt, &numer, |j, _| sizes[j] as f64);
    Ok(vt)
}

/// One walk over the grouped sums for the mode-p sub-problem: the
/// objective at `ut` (linear term weighted by group size) together with the
/// update numerator `sum_j (Yj_(p) ./ (U~ G_jp)) G_jp^T`,
/// `G_jp = diag(v_j) U_{-p}^T`.
fn response_pass_grouped(
    ut: &Matrix,
    my: &[Matrix],
    kr_mp: &Matrix,
    v: &Matrix,
    sizes: &[usize],
) -> (f64, Matrix) {
    let (m_p, r) = (ut.rows(), ut.cols());
    let m_rest = kr_mp.rows();
    let mut f = 0.0;
    let mut numer = Matrix::zeros(m_p, r);
    let mut rates = vec![0.0; m_p];
    let mut ratio = vec![0.0; m_p];
    for (j, yj) in my.iter().enumerate() {
        let tau_j = sizes[j] as f64;
        for col in 0..m_rest {
            rates.fill(0.0);
            for c in 0..r {
                let k = kr_mp.get(col, c) * v.get(j, c);
                for (rate, &u) in rates.iter_mut().zip(ut.col(c)) {
                    *rate += u * k;
                }
            }
            let ycol = yj.col(col);
            for ((&y, &rate), rt) in ycol.iter().zip(&rates).zip(&mut ratio) {
                if y > 0.0 {
                    f += y * rate.ln();
                    *rt = y / rate;
                } else {
                    *rt = 0.0;
                }
                f -= tau_j * rate;
            }
            for c in 0..r {
                let k = kr_mp.get(col, c) * v.get(j, c);
                if k == 0.0 {
                    continue;
                }
                for (slot, &rt) in numer.col_mut(c).iter_mut().zip(&ratio) {
                    *slot += rt * k;
                }
            }
        }
    }
    (f, numer)
}

/// One walk over the grouped sums for the group-factor sub-problem: the
/// objective at `vt` plus the numerator rows `(vec(Yj) ./ (ukr vj~))^T ukr`.
fn covariate_pass_grouped(
    vt: &Matrix,
    sums: &[DenseTensor],
    ukr: &Matrix,
    sizes: &[usize],
) -> (f64, Matrix) {
    let (groups, r) = (vt.rows(), vt.cols());
    let m = ukr.rows();
    let mut f = 0.0;
    let mut numer = Matrix::zeros(groups, r);
    let mut rates = vec![0.0; m];
    for (j, yj) in sums.iter().enumerate() {
        let tau_j = sizes[j] as f64;
        rates.fill(0.0);
        for c in 0..r {
            let s = vt.get(j, c);
            if s == 0.0 {
                continue;
            }
            for (rate, &u) in rates.iter_mut().zip(ukr.col(c)) {
                *rate += u * s;
            }
        }
        for (e, (&y, &rate)) in yj.values().iter().zip(&rates).enumerate() {
            if y > 0.0 {
                f += y * rate.ln();
                let ratio = y / rate;
                for c in 0..r {
                    numer.set(j, c, numer.get(j, c) + ukr.get(e, c) * ratio);
                }
            }
            f -= tau_j * rate;
        }
    }
    (f, numer)
}

fn apply_floor_update(
    iterate: &mut Matrix,
    numer: &Matrix,
    denom: impl Fn(usize, usize) -> f64,
) -> usize {
    let mut floor_hits = 0;
    for c in 0..iterate.cols() {
        for row in 0..iterate.rows() {
            let d = denom(row, c);
            let mut next = iterate.get(row, c) * numer.get(row, c) / d;
            if next < mm::POSITIVITY_FLOOR {
                next = mm::POSITIVITY_FLOOR;
                floor_hits += 1;
            }
            iterate.set(row, c, next);
        }
    }
    floor_hits
}

/// Fit a grouped PTANOVA model by alternating simplified updates with
/// multi-start. `sums[j]` is the group-j count sum over `sizes[j]` steps.
pub fn fit_ptanova(
    sums: &[DenseTensor],
    sizes: &[usize],
    cfg: &PtanovaConfig,
) -> Result<PtanovaFit, ChangePointError> {
    assert_eq!(sums.len(), sizes.len());
    let groups = sums.len();
    let dims = sums[0].dims().to_vec();
    let r = cfg.rank;
    let p_modes = dims.len();
    let g = Grouped { sums, sizes };
    // The grouped sums are fixed; matricize them once for all restarts.
    let my_all: Vec<Vec<Matrix>> = (0..p_modes)
        .map(|p| {
            g.sums
                .iter()
                .map(|y| y.matricize(p + 1))
                .collect::<Result<_, _>>()
        })
        .collect::<Result<_, crate::tensor::TensorError>>()?;

    let run = |restart: usize| -> Result<(CpTensor, f64, Vec<f64>, bool), ChangePointError> {
        let mut rng = synth::rng_for(cfg.seed, "ptanova-restart", restart as u64);
        let v0 = Matrix::from_fn(groups, r, |_, _| rng.random_range(0.1..1.0));
        let us0: Vec<Matrix> = dims
            .iter()
            .map(|&m| Matrix::from_fn(m, r, |_, _| rng.random_range(0.1..1.0)))
            .collect();
        let state = CpTensor::new(vec![1.0; r], vec![v0], us0)?
            .normalized()
            .map_err(ChangePointError::from)?;
        let mut lambda = state.weights().to_vec();
        let mut v = state.covariate_factors()[0].clone();
        let mut us = state.response_factors().to_vec();

        let ukr_of = |us: &[Matrix]| {
            let mats: Vec<&Matrix> = us.iter().rev().collect();
            khatri_rao(&mats, r).expect("validated factors")
        };
        let mut loglik = grouped_loglik(&g, &lambda, &v, &ukr_of(&us));
        let mut trajectory = vec![loglik];
        let mut converged = false;

        for _ in 0..cfg.outer_max_sweeps {
            // Response factors. Each inner pass yields the objective at
            // the current point plus the numerator for the next update.
            for p in 0..p_modes {
                let kr_mp: Vec<&Matrix> = us
                    .iter()
                    .enumerate()
                    .rev()
                    .filter(|(s, _)| *s != p)
                    .map(|(_, m)| m)
                    .collect();
                let kr_mp = khatri_rao(&kr_mp, r)?;
                let my = &my_all[p];
                let w: Vec<f64> = (0..r)
                    .map(|c| {
                        g.sizes
                            .iter()
                            .enumerate()
                            .map(|(j, &n)| n as f64 * v.get(j, c))
                            .sum()
                    })
                    .collect();
                let mut ut = us[p].mul_diag(&lambda);
                let (mut f_prev, mut numer) =
                    response_pass_grouped(&ut, my, &kr_mp, &v, g.sizes);
                for k in 0..cfg.inner_max_iter {
                    apply_floor_update(&mut ut, &numer, |_, c| w[c]);
                    // The pass after the last update would only feed another
                    // update; skip it once the budget is spent.
                    if k + 1 == cfg.inner_max_iter {
                        break;
                    }
                    let (f, nm) = response_pass_grouped(&ut, my, &kr_mp, &v, g.sizes);
                    numer = nm;
                    let rel = (f - f_prev).abs() / f_prev.abs().max(1e-12);
                    f_prev = f;
                    if rel < cfg.inner_tol {
                        break;
                    }
                }
                let sums_c = ut.col_sums();
                for (c, &s) in sums_c.iter().enumerate() {
                    ut.scale_col(c, 1.0 / s);
                }
                lambda = sums_c;
                us[p] = ut;
            }
            // Covariate (group) factor.
            let ukr = ukr_of(&us);
            let mut vt = v.mul_diag(&lambda);
            let (mut f_prev, mut numer) = covariate_pass_grouped(&vt, g.sums, &ukr, g.sizes);
            for k in 0..cfg.inner_max_iter {
                apply_floor_update(&mut vt, &numer, |j, _| g.sizes[j] as f64);
                if k + 1 == cfg.inner_max_iter {
                    break;
                }
                let (f, nm) = covariate_pass_grouped(&vt, g.sums, &ukr, g.sizes);
                numer = nm;
                let rel = (f - f_prev).abs() / f_prev.abs().max(1e-12);
                f_prev = f;
                if rel < cfg.inner_tol {
                    break;
                }
            }
            let sums_c = vt.col_sums();
            for (c, &s) in sums_c.iter().enumerate() {
                vt.scale_col(c, 1.0 / s);
            }
            lambda = sums_c;
            v = vt;

            // Re-normalize (sorts weights, keeps reconstruction fixed).
            let state = CpTensor::new(lambda.clone(), vec![v.clone()], us.clone())?
                .normalized()?;
            lambda = state.weights().to_vec();
            v = state.covariate_factors()[0].clone();
            us = state.response_factors().to_vec();

            let f = grouped_loglik(&g, &lambda, &v, &ukr_of(&us));
            trajectory.push(f);
            let rel = (f - loglik).abs() / loglik.abs().max(1e-12);
            loglik = f;
            if rel < cfg.outer_tol {
                converged = true;
                break;
            }
        }
        let coeff = CpTensor::new(lambda, vec![v], us)?;
        Ok((coeff, loglik, trajectory, converged))
    };

    let singles = par::map_indexed(cfg.restarts, run);
    let mut fits = Vec::with_capacity(cfg.restarts);
    for s in singles {
        fits.push(s?);
    }
    let restart_logliks: Vec<f64> = fits.iter().map(|f| f.1).collect();
    let mut best = 0;
    for (k, f) in fits.iter().enumerate() {
        if f.1 > fits[best].1 {
            best = k;
        }
    }
    let (coefficient, loglik, trajectory, converged) = fits.swap_remove(best);
    Ok(PtanovaFit { coefficient, loglik, trajectory, restart_logliks, converged })
}

/// Scan all candidate change-points: fit the two-group model per `tau`, the
/// single-group null once, and report the argmax with likelihood ratios.
/// Ties go to the smallest candidate.
pub fn changepoint_scan(
    series: &[DenseTensor],
    cfg: &PtanovaConfig,
    tau_candidates: &[usize],
) -> Result<ChangePointResult, ChangePointError> {
    let t_len = series.len();
    if t_len < 2 {
        return Err(ChangePointError::SeriesTooShort(t_len));
    }
    let dims = series[0].dims().to_vec();
    if series.iter().any(|y| y.dims() != dims) {
        return Err(ChangePointError::InconsistentDims);
    }
    if series
        .iter()
        .any(|y| y.values().iter().any(|&v| v < 0.0 || v.fract() != 0.0 || !v.is_finite()))
    {
        return Err(ChangePointError::NotCounts);
    }
    if tau_candidates.is_empty()
        || tau_candidates.iter().any(|&t| t < 1 || t >= t_len)
    {
        return Err(ChangePointError::BadCandidates {
            max: t_len - 1,
            got: tau_candidates.to_vec(),
        });
    }
    // Prefix sums over time.
    let mut prefix: Vec<DenseTensor> = Vec::with_capacity(t_len);
    let mut acc = DenseTensor::zeros(&dims)?;
    for y in series {
        for (a, &v) in acc.values_mut().iter_mut().zip(y.values()) {
            *a += v;
        }
        prefix.push(acc.clone());
    }
    let total = prefix[t_len - 1].clone();
    if !total.values().iter().any(|&v| v > 0.0) {
        return Err(ChangePointError::AllZeroSeries);
    }

    let null_fit = fit_ptanova(std::slice::from_ref(&total), &[t_len], cfg)?;
    let fits_res = par::map_indexed(tau_candidates.len(), |k| {
        let tau = tau_candidates[k];
        let y1 = prefix[tau - 1].clone();
        let y2 = DenseTensor::new(
            dims.clone(),
            total
                .values()
                .iter()
                .zip(y1.values())
                .map(|(a, b)| a - b)
                .collect(),
        )?;
        let mut cfg_tau = cfg.clone();
        cfg_tau.seed = synth::derive_seed(cfg.seed, "tau", tau as u64);
        fit_ptanova(&[y1, y2], &[tau, t_len - tau], &cfg_tau)
    });
    let mut fits = Vec::with_capacity(tau_candidates.len());
    for f in fits_res {
        fits.push(f?);
    }
    let loglik_by_tau: Vec<(usize, f64)> = tau_candidates
        .iter()
        .zip(&fits)
        .map(|(&tau, f)| (tau, f.loglik))
        .collect();
    let lambda_by_tau: Vec<(usize, f64)> = loglik_by_tau
        .iter()
        .map(|&(tau, ll)| (tau, 2.0 * (ll - null_fit.loglik)))
        .collect();
    let mut tau_hat = loglik_by_tau[0].0;
    let mut best = loglik_by_tau[0].1;
    for &(tau, ll) in &loglik_by_tau[1..] {
        if ll > best || (ll == best && tau < tau_hat) {
            best = ll;
            tau_hat = tau;
        }
    }
    Ok(ChangePointResult {
        tau_hat,
        loglik_by_tau,
        null_loglik: null_fit.loglik,
        lambda_by_tau,
        fits,
        null_fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{
        build_covariate_update, build_response_update, covariate_update_step, loglikelihood,
        response_update_step, PtotrProblem,
    };
    use crate::mm::mm_step;
    use crate::synth::{make_changepoint_series, rng_for};
    use rand::Rng;

    fn random_series(seed: u64, dims: &[usize], t_len: usize) -> Vec<DenseTensor> {
        let mut rng = rng_for(seed, "cp-series", 0);
        (0..t_len)
            .map(|_| {
                DenseTensor::new(
                    dims.to_vec(),
                    (0..dims.iter().product())
                        .map(|_| crate::synth::poisson(2.0, &mut rng).unwrap() as f64)
                        .collect(),
                )
                .unwrap()
            })
            .collect()
    }

    fn grouped_from(series: &[DenseTensor], tau: usize) -> (Vec<DenseTensor>, Vec<usize>) {
        let dims = series[0].dims().to_vec();
        let mut y1 = DenseTensor::zeros(&dims).unwrap();
        let mut y2 = DenseTensor::zeros(&dims).unwrap();
        for (t, y) in series.iter().enumerate() {
            let dst = if t < tau { &mut y1 } else { &mut y2 };
            for (a, &v) in dst.values_mut().iter_mut().zip(y.values()) {
                *a += v;
            }
        }
        (vec![y1, y2], vec![tau, series.len() - tau])
    }

    fn equivalent_problem(series: &[DenseTensor], tau: usize) -> PtotrProblem {
        let xs: Vec<DenseTensor> = (0..series.len())
            .map(|t| {
                let v = if t < tau { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
                DenseTensor::new(vec![2], v).unwrap()
            })
            .collect();
        PtotrProblem::new(series.to_vec(), xs).unwrap()
    }

    fn random_state(seed: u64, dims: &[usize], groups: usize, r: usize) -> CpTensor {
        let mut rng = rng_for(seed, "cp-state", 0);
        let v = Matrix::from_fn(groups, r, |_, _| rng.random_range(0.2..1.0));
        let us: Vec<Matrix> = dims
            .iter()
            .map(|&m| Matrix::from_fn(m, r, |_, _| rng.random_range(0.2..1.0)))
            .collect();
        CpTensor::new(
            (0..r).map(|_| rng.random_range(0.5..3.0)).collect(),
            vec![v],
            us,
        )
        .unwrap()
        .normalized()
        .unwrap()
    }

    #[test]
    fn simplified_updates_match_generic_mm_step() {
        for trial in 0..20 {
            let dims = [3usize, 2, 2];
            let series = random_series(trial, &dims, 6);
            let tau = 2 + (trial as usize) % 3;
            let (sums, sizes) = grouped_from(&series, tau);
            let b = random_state(trial + 100, &dims, 2, 2);
            let problem = equivalent_problem(&series, tau);

            // V update vs generic row-form step.
            let simp_v = simplified_covariate_step(&sums, &sizes, &b).unwrap();
            let generic_problem = build_covariate_update(&problem, &b, 1).unwrap();
            let generic_row = mm_step(generic_problem.c_init(), &generic_problem).unwrap();
            for r in 0..2 {
                for j in 0..2 {
                    let want = generic_row.get(0, j + r * 2);
                    let got = simp_v.get(j, r);
                    assert!(
                        (got - want).abs() <= 1e-10 * want.abs().max(1e-12),
                        "trial {trial} v[{j},{r}]"
                    );
                }
            }

            // U updates vs generic stacked step, every mode.
            for p in 1..=3 {
                let simp_u = simplified_response_step(&sums, &sizes, &b, p).unwrap();
                let gp = build_response_update(&problem, &b, p).unwrap();
                let generic = mm_step(gp.c_init(), &gp).unwrap();
                let scale = generic
                    .data()
                    .iter()
                    .fold(0.0_f64, |a, &v| a.max(v.abs()))
                    .max(1e-12);
                assert!(
                    simp_u.max_abs_diff(&generic) / scale <= 1e-10,
                    "trial {trial} mode {p}"
                );
            }

            // Also match the estimator's specialized steps.
            let est_v = covariate_update_step(&problem, &b, 1).unwrap();
            assert!(simp_v.max_abs_diff(&est_v) <= 1e-10);
            let est_u = response_update_step(&problem, &b, 1).unwrap();
            let simp_u = simplified_response_step(&sums, &sizes, &b, 1).unwrap();
            assert!(simp_u.max_abs_diff(&est_u) <= 1e-10);
        }
    }

    #[test]
    fn grouped_loglik_equals_per_step_loglik() {
        for trial in 0..5 {
            let dims = [2usize, 3];
            let series = random_series(50 + trial, &dims, 7);
            let tau = 3;
            let (sums, sizes) = grouped_from(&series, tau);
            let b = random_state(trial, &dims, 2, 2);
            let g = Grouped { sums: &sums, sizes: &sizes };
            let ukr = b.response_khatri_rao();
            let grouped = grouped_loglik(&g, b.weights(), &b.covariate_factors()[0], &ukr);
            let problem = equivalent_problem(&series, tau);
            let full = loglikelihood(&problem, &b, false).unwrap();
            assert!(
                (grouped - full).abs() <= 1e-10 * full.abs().max(1.0),
                "trial {trial}: {grouped} vs {full}"
            );
        }
    }

    #[test]
    fn singleton_candidate_is_returned() {
        let series = random_series(7, &[2, 2], 2);
        let cfg = PtanovaConfig { rank: 1, restarts: 2, ..PtanovaConfig::default() };
        let res = changepoint_scan(&series, &cfg, &[1]).unwrap();
        assert_eq!(res.tau_hat, 1);
        assert_eq!(res.loglik_by_tau.len(), 1);
        assert!((res.lambda_by_tau[0].1
            - 2.0 * (res.loglik_by_tau[0].1 - res.null_loglik))
            .abs()
            < 1e-12);
    }

    #[test]
    fn reference_scale_changepoint_is_detected() {
        // 10x10x15, T=14, a=8, tau=6, rank 4 with multistart.
        let mut rng = rng_for(42, "cp-ref", 0);
        let series = make_changepoint_series(10, 10, 15, 14, 6, 8.0, 1, &mut rng).unwrap();
        let cfg = PtanovaConfig {
            rank: 4,
            restarts: 8,
            outer_tol: 1e-5,
            inner_max_iter: 10,
            outer_max_sweeps: 40,
            seed: 3,
            ..PtanovaConfig::default()
        };
        let candidates: Vec<usize> = (1..14).collect();
        let res = changepoint_scan(&series, &cfg, &candidates).unwrap();
        assert_eq!(res.tau_hat, 6);
        // Nested-model nonnegativity up to optimization slack.
        for &(_, lambda) in &res.lambda_by_tau {
            assert!(lambda >= -10.0 * cfg.outer_tol * res.null_loglik.abs());
        }
    }

    #[test]
    fn ptanova_trajectories_are_monotone() {
        let series = random_series(9, &[3, 3, 2], 8);
        let (sums, sizes) = grouped_from(&series, 4);
        let cfg = PtanovaConfig { rank: 2, restarts: 3, seed: 5, ..PtanovaConfig::default() };
        let fit = fit_ptanova(&sums, &sizes, &cfg).unwrap();
        for w in fit.trajectory.windows(2) {
            assert!(w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        assert!(fit.coefficient.is_normalized(1e-10));
    }

    #[test]
    fn scan_validates_inputs() {
        let series = random_series(11, &[2, 2], 4);
        let cfg = PtanovaConfig::default();
        assert!(matches!(
            changepoint_scan(&series[..1], &cfg, &[1]),
            Err(ChangePointError::SeriesTooShort(_))
        ));
        assert!(matches!(
            changepoint_scan(&series, &cfg, &[]),
            Err(ChangePointError::BadCandidates { .. })
        ));
        assert!(matches!(
            changepoint_scan(&series, &cfg, &[4]),
            Err(ChangePointError::BadCandidates { .. })
        ));
        let zeros = vec![DenseTensor::zeros(&[2, 2]).unwrap(); 4];
        assert!(matches!(
            changepoint_scan(&zeros, &cfg, &[2]),
            Err(ChangePointError::AllZeroSeries)
        ));
    }
}
