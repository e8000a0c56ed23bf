//! Tomographic reconstruction as Poisson tensor regression.
//!
//! A `P`-dimensional image `B` with leading pixel modes `(N_1, N_2)` and
//! trailing response modes (e.g. depth x frame) is observed through the
//! Radon operator: each retained sinogram cell `(i1,i2)` contributes one
//! covariate image `R_(i1,i2)` and one Poisson count tensor with rates
//! `<R_(i1,i2)|B>`. The CP-constrained fit delegates to the estimator;
//! ML-EM is the unconstrained full-rank baseline, one multiplicative kernel
//! step per iteration on the vectorized problem.

use crate::estimator::{self, FitConfig, FitError, FitResult, PtotrProblem};
use crate::mm::{self, MmProblem};
use crate::radon::{RadonError, RadonOperator};
use crate::synth;
use crate::tensor::{DenseTensor, Matrix, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PetError {
    #[error("truth leading dims {got:?} must match image dims {want:?}")]
    TruthDims { want: (usize, usize), got: Vec<usize> },
    #[error("truth must be strictly positive, found {0}")]
    NonPositiveTruth(f64),
    #[error("subsample fraction must lie in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("no retained cell carries covariate mass; nothing to fit")]
    NoInformativeCells,
    #[error(transparent)]
    Radon(#[from] RadonError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Mm(#[from] mm::MmError),
}

/// A simulated (or assembled) tomography dataset: the operator, the retained
/// sinogram cells, and one count tensor per cell. Covariate images are
/// materialized on demand; cells whose covariate is identically zero (bins
/// beyond the projected image support) carry no likelihood information.
#[derive(Debug, Clone)]
pub struct PetProblem {
    pub op: RadonOperator,
    /// Retained cells as 1-based (angle, bin) pairs, in selection order.
    pub cells: Vec<(usize, usize)>,
    /// One response tensor per retained cell.
    pub responses: Vec<DenseTensor>,
    /// Trailing response extents (`[1]` for scalar-response 2-D tomography).
    pub response_dims: Vec<usize>,
}

impl PetProblem {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Covariate image of the `k`-th retained cell.
    pub fn covariate(&self, k: usize) -> Result<DenseTensor, PetError> {
        let (i1, i2) = self.cells[k];
        Ok(self.op.covariate(i1, i2)?)
    }

    /// Materialize the regression problem, dropping cells with identically
    /// zero covariates (their rates are structurally zero and their counts
    /// almost surely zero). Returns the problem plus the retained indices.
    pub fn to_ptotr(&self) -> Result<(PtotrProblem, Vec<usize>), PetError> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut kept = Vec::new();
        for k in 0..self.len() {
            let x = self.covariate(k)?;
            if x.values().iter().any(|&v| v > 0.0) {
                xs.push(x);
                ys.push(self.responses[k].clone());
                kept.push(k);
            }
        }
        if kept.is_empty() {
            return Err(PetError::NoInformativeCells);
        }
        Ok((PtotrProblem::new(ys, xs)?, kept))
    }
}

/// Split a `P`-dimensional truth tensor into (image dims, response dims),
/// treating a plain 2-D image as having scalar responses.
fn split_truth_dims(truth: &DenseTensor) -> Result<((usize, usize), Vec<usize>), PetError> {
    if truth.order() < 2 {
        return Err(PetError::TruthDims { want: (0, 0), got: truth.dims().to_vec() });
    }
    let image = (truth.dims()[0], truth.dims()[1]);
    let rest = if truth.order() == 2 { vec![1] } else { truth.dims()[2..].to_vec() };
    Ok((image, rest))
}

/// Sample a tomography dataset: subsample `floor(fraction * cells)` sinogram
/// cells uniformly without replacement and draw Poisson counts at rates
/// `<R_(i1,i2)|truth>`.
pub fn simulate(
    truth: &DenseTensor,
    op: &RadonOperator,
    fraction: f64,
    seed: u64,
) -> Result<PetProblem, PetError> {
    let (image_dims, response_dims) = split_truth_dims(truth)?;
    if image_dims != op.image_dims() {
        return Err(PetError::TruthDims { want: op.image_dims(), got: truth.dims().to_vec() });
    }
    if truth.values().iter().any(|&v| !(v > 0.0)) {
        let bad = truth.values().iter().copied().find(|&v| !(v > 0.0)).unwrap();
        return Err(PetError::NonPositiveTruth(bad));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(PetError::BadFraction(fraction));
    }
    let (n_angles, n_bins) = op.sinogram_dims();
    let total = n_angles * n_bins;
    let keep = ((fraction * total as f64).floor() as usize).max(1);

    // Partial Fisher-Yates draw of `keep` distinct cell offsets.
    let mut rng = synth::rng_for(seed, "pet-subsample", 0);
    let mut pool: Vec<usize> = (0..total).collect();
    for k in 0..keep {
        let j = k + (rand::Rng::random_range(&mut rng, 0..(total - k) as u64) as usize);
        pool.swap(k, j);
    }
    let mut cells: Vec<(usize, usize)> = pool[..keep]
        .iter()
        .map(|&off| (off % n_angles + 1, off / n_angles + 1))
        .collect();
    cells.sort_unstable();

    // Rates come from per-response-slice sinograms of the truth.
    let m: usize = response_dims.iter().product();
    let npix = image_dims.0 * image_dims.1;
    let mut slice_sinos = Vec::with_capacity(m);
    for e in 0..m {
        let slice = DenseTensor::new(
            vec![image_dims.0, image_dims.1],
            truth.values()[e * npix..(e + 1) * npix].to_vec(),
        )?;
        slice_sinos.push(op.forward(&slice)?);
    }

    let mut responses = Vec::with_capacity(cells.len());
    let mut draw_rng = synth::rng_for(seed, "pet-counts", 0);
    for &(i1, i2) in &cells {
        let off = (i1 - 1) + (i2 - 1) * n_angles;
        let mut counts = Vec::with_capacity(m);
        for sino in &slice_sinos {
            let rate = sino.values()[off];
            counts.push(synth::poisson(rate, &mut draw_rng).map_err(|e| {
                PetError::Fit(FitError::InvalidProblem(e.to_string()))
            })? as f64);
        }
        responses.push(DenseTensor::new(response_dims.clone(), counts)?);
    }
    Ok(PetProblem { op: op.clone(), cells, responses, response_dims })
}

/// Root mean square error `sqrt(||est - truth||_F^2 / prod(dims))`.
pub fn rmse(est: &DenseTensor, truth: &DenseTensor) -> Result<f64, TensorError> {
    if est.dims() != truth.dims() {
        return Err(TensorError::DimMismatch(format!(
            "{:?} vs {:?}",
            est.dims(),
            truth.dims()
        )));
    }
    let d = est.len() as f64;
    let ss: f64 = est
        .values()
        .iter()
        .zip(truth.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss / d).sqrt())
}

#[derive(Debug, Clone)]
pub struct MlemResult {
    /// Unconstrained estimate with dims (N_1, N_2, M_1..).
    pub b_hat: DenseTensor,
    /// RMSE against the supplied truth after each iteration (starting at
    /// the all-ones initialization), empty when no truth is given.
    pub rmse_trajectory: Vec<f64>,
    pub objective_trajectory: Vec<f64>,
    /// Response entries (rows of the stacked count matrix) with no counts
    /// anywhere: their MLE does not exist and the iterate row decays.
    pub dne_rows: Vec<usize>,
    /// 0-based pixels covered by no retained cell. They do not enter the
    /// likelihood; their estimate is reported as zero.
    pub unobserved_pixels: Vec<usize>,
    pub iterations: usize,
}

/// Classic ML-EM: the multiplicative kernel iterated on the vectorized
/// problem `C = Bmat^T` (responses x pixels), `D` = stacked vectorized
/// covariates, `Y` = stacked vectorized counts, from a uniform start.
pub fn reconstruct_mlem(
    problem: &PetProblem,
    max_iter: usize,
    truth: Option<&DenseTensor>,
) -> Result<MlemResult, PetError> {
    let (n1, n2) = problem.op.image_dims();
    let npix = n1 * n2;
    let m: usize = problem.response_dims.iter().product();

    // Keep only cells with covariate mass; empty columns contribute nothing.
    let mut cols = Vec::new();
    let mut kept = Vec::new();
    for k in 0..problem.len() {
        let x = problem.covariate(k)?;
        if x.values().iter().any(|&v| v > 0.0) {
            cols.push(x.into_values());
            kept.push(k);
        }
    }
    if kept.is_empty() {
        return Err(PetError::NoInformativeCells);
    }
    let l = kept.len();
    // Pixels outside every retained covariate never touch the likelihood;
    // exclude them from the kernel problem and report them at zero.
    let mut pixel_mass = vec![0.0; npix];
    for col in &cols {
        for (mass, &v) in pixel_mass.iter_mut().zip(col) {
            *mass += v;
        }
    }
    let observed: Vec<usize> = (0..npix).filter(|&p| pixel_mass[p] > 0.0).collect();
    let unobserved_pixels: Vec<usize> =
        (0..npix).filter(|&p| pixel_mass[p] == 0.0).collect();
    let mut d = Matrix::zeros(observed.len(), l);
    let mut y = Matrix::zeros(m, l);
    for (c, (col, &k)) in cols.iter().zip(&kept).enumerate() {
        for (row, &pix) in observed.iter().enumerate() {
            d.set(row, c, col[pix]);
        }
        y.col_mut(c).copy_from_slice(problem.responses[k].values());
    }
    let dne_rows: Vec<usize> = mm::check_mle_exists(&y)
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(r, _)| r + 1)
        .collect();
    let c0 = Matrix::from_fn(m, observed.len(), |_, _| 1.0);
    let p = MmProblem::new(y, d, c0)?;

    let mut b_dims = vec![n1, n2];
    b_dims.extend(&problem.response_dims);
    let to_tensor = |c: &Matrix| -> DenseTensor {
        // C[e, row] -> B[observed[row] + npix * e], column-major (N1,N2,M..).
        let mut values = vec![0.0; npix * m];
        for e in 0..m {
            for (row, &pix) in observed.iter().enumerate() {
                values[pix + e * npix] = c.get(e, row);
            }
        }
        DenseTensor::new(b_dims.clone(), values).expect("consistent dims")
    };

    let mut c = p.c_init().clone();
    let mut objective_trajectory = vec![mm::mm_objective(&c, &p)?];
    let mut rmse_trajectory = Vec::new();
    if let Some(t) = truth {
        rmse_trajectory.push(rmse(&to_tensor(&c), t)?);
    }
    for _ in 0..max_iter {
        c = mm::mm_step(&c, &p)?;
        objective_trajectory.push(mm::mm_objective(&c, &p)?);
        if let Some(t) = truth {
            rmse_trajectory.push(rmse(&to_tensor(&c), t)?);
        }
    }
    Ok(MlemResult {
        b_hat: to_tensor(&c),
        rmse_trajectory,
        objective_trajectory,
        dne_rows,
        unobserved_pixels,
        iterations: max_iter,
    })
}

#[derive(Debug, Clone)]
pub struct PetPtotrResult {
    pub fit: FitResult,
    /// Estimate reconstructed from the fitted CP coefficient.
    pub b_hat: DenseTensor,
    /// RMSE against the supplied truth at initialization and after each
    /// sweep of the winning restart; empty when no truth is given.
    pub rmse_trajectory: Vec<f64>,
    /// Indices of the retained (informative) cells.
    pub kept_cells: Vec<usize>,
}

/// CP-constrained reconstruction through the alternating estimator.
pub fn reconstruct_ptotr(
    problem: &PetProblem,
    cfg: &FitConfig,
    truth: Option<&DenseTensor>,
) -> Result<PetPtotrResult, PetError> {
    let (ptotr, kept_cells) = problem.to_ptotr()?;
    let truth_owned = truth.map(|t| {
        if t.order() == 2 {
            // Scalar-response problems carry dims (N1, N2, 1).
            let mut dims = t.dims().to_vec();
            dims.push(1);
            DenseTensor::new(dims, t.values().to_vec()).expect("consistent dims")
        } else {
            t.clone()
        }
    });
    let metric = truth_owned.as_ref().map(|t| {
        move |b: &crate::tensor::CpTensor| -> f64 {
            rmse(&b.reconstruct(), t).expect("dims fixed by the problem")
        }
    });
    let (fit, rmse_trajectory) = match &metric {
        Some(m) => estimator::fit_with_metric(&ptotr, cfg, Some(m))?,
        None => estimator::fit_with_metric(&ptotr, cfg, None)?,
    };
    let b_hat = fit.coefficient.reconstruct();
    Ok(PetPtotrResult { fit, b_hat, rmse_trajectory, kept_cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radon::Binning;
    use crate::synth::{make_phantom, PhantomKind};

    fn tiny_op(n: usize) -> RadonOperator {
        RadonOperator::parallel_beam((n, n), n, 2 * n, Binning::Nearest).unwrap()
    }

    #[test]
    fn rmse_examples() {
        let a = DenseTensor::constant(&[3, 2], 2.0).unwrap();
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b = DenseTensor::constant(&[3, 2], 3.0).unwrap();
        assert!((rmse(&b, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!(rmse(&a, &DenseTensor::zeros(&[2, 3]).unwrap()).is_err());
    }

    #[test]
    fn rmse_matches_naive_oracle() {
        let mut rng = crate::synth::rng_for(1, "rmse", 0);
        let a = DenseTensor::new(
            vec![4, 3],
            (0..12).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect(),
        )
        .unwrap();
        let b = DenseTensor::new(
            vec![4, 3],
            (0..12).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect(),
        )
        .unwrap();
        let mut ss = 0.0;
        for i in 0..4 {
            for j in 0..3 {
                let d = a.values()[i + j * 4] - b.values()[i + j * 4];
                ss += d * d;
            }
        }
        let want = (ss / 12.0).sqrt();
        let got = rmse(&a, &b).unwrap();
        assert!((want - got).abs() <= 1e-12 * want.max(1.0));
    }

    #[test]
    fn subsample_count_on_large_grid_is_exact() {
        // 256x1024 sinogram grid at 2% -> floor(0.02 * 262144) observations.
        // Count cells only; no covariates are materialized at this scale.
        let op = RadonOperator::parallel_beam((256, 256), 256, 1024, Binning::Nearest).unwrap();
        let truth = DenseTensor::constant(&[256, 256], 0.001).unwrap();
        let pet = simulate(&truth, &op, 0.02, 99).unwrap();
        assert_eq!(pet.len(), (0.02_f64 * 262_144.0).floor() as usize);
        assert_eq!(pet.len(), 5_242);
    }

    #[test]
    fn simulate_is_deterministic() {
        let op = tiny_op(8);
        let truth = make_phantom(8, 8, PhantomKind::Blocks, 0.2).unwrap();
        let a = simulate(&truth, &op, 0.5, 7).unwrap();
        let b = simulate(&truth, &op, 0.5, 7).unwrap();
        assert_eq!(a.cells, b.cells);
        assert_eq!(a.responses, b.responses);
        let c = simulate(&truth, &op, 0.5, 8).unwrap();
        assert!(a.cells != c.cells || a.responses != c.responses);
    }

    #[test]
    fn simulate_validates_inputs() {
        let op = tiny_op(8);
        let truth = make_phantom(8, 8, PhantomKind::Uniform, 0.2).unwrap();
        assert!(matches!(
            simulate(&truth, &op, 0.0, 1),
            Err(PetError::BadFraction(_))
        ));
        assert!(matches!(
            simulate(&truth, &op, 1.5, 1),
            Err(PetError::BadFraction(_))
        ));
        let bad = DenseTensor::zeros(&[8, 8]).unwrap();
        assert!(matches!(
            simulate(&bad, &op, 0.5, 1),
            Err(PetError::NonPositiveTruth(_))
        ));
        let wrong = make_phantom(4, 4, PhantomKind::Uniform, 0.2).unwrap();
        assert!(matches!(
            simulate(&wrong, &op, 0.5, 1),
            Err(PetError::TruthDims { .. })
        ));
    }

    #[test]
    fn poisson_means_track_rates_at_full_fraction() {
        // Uniform truth, full sampling: average counts over repeated draws
        // stay within 3 sigma of each cell rate.
        let op = tiny_op(6);
        let truth = DenseTensor::constant(&[6, 6], 2.0).unwrap();
        let sino = op.forward(&truth).unwrap();
        let n_draws = 1000;
        let mut sums = vec![0.0; op.cells()];
        for d in 0..n_draws {
            let pet = simulate(&truth, &op, 1.0, 1000 + d).unwrap();
            for (k, &(i1, i2)) in pet.cells.iter().enumerate() {
                let off = (i1 - 1) + (i2 - 1) * op.angles().len();
                sums[off] += pet.responses[k].values()[0];
            }
        }
        for (off, &s) in sums.iter().enumerate() {
            let rate = sino.values()[off];
            let mean = s / n_draws as f64;
            let sigma = (rate / n_draws as f64).sqrt();
            assert!(
                (mean - rate).abs() <= 3.0 * sigma + 1e-9,
                "cell {off}: mean={mean} rate={rate}"
            );
        }
    }

    #[test]
    fn mlem_one_iteration_equals_one_mm_step() {
        let op = tiny_op(6);
        let truth = make_phantom(6, 6, PhantomKind::Blocks, 0.3).unwrap();
        let pet = simulate(&truth, &op, 1.0, 3).unwrap();
        let one = reconstruct_mlem(&pet, 1, None).unwrap();
        // Rebuild the same stacked problem and take a single kernel step.
        let (n1, n2) = op.image_dims();
        let npix = n1 * n2;
        let mut cols = Vec::new();
        let mut kept = Vec::new();
        for k in 0..pet.len() {
            let x = pet.covariate(k).unwrap();
            if x.values().iter().any(|&v| v > 0.0) {
                cols.push(x.into_values());
                kept.push(k);
            }
        }
        let l = kept.len();
        let mut d = Matrix::zeros(npix, l);
        let mut y = Matrix::zeros(1, l);
        for (c, (col, &k)) in cols.iter().zip(&kept).enumerate() {
            d.col_mut(c).copy_from_slice(col);
            y.set(0, c, pet.responses[k].values()[0]);
        }
        let p = MmProblem::new(y, d, Matrix::from_fn(1, npix, |_, _| 1.0)).unwrap();
        let c1 = mm::mm_step(p.c_init(), &p).unwrap();
        for pix in 0..npix {
            let got = one.b_hat.values()[pix];
            let want = c1.get(0, pix);
            assert!((got - want).abs() <= 1e-14 * want.abs().max(1.0));
        }
    }

    #[test]
    fn mlem_fits_noiseless_full_data() {
        // Rounded rates at full sampling: the projected estimate must match
        // the observed counts closely at the MLE.
        let op = tiny_op(8);
        let truth = make_phantom(8, 8, PhantomKind::Blocks, 0.5).unwrap();
        // Scale so rates are large and rounding is negligible.
        let truth = DenseTensor::new(
            vec![8, 8],
            truth.values().iter().map(|v| v * 50.0).collect(),
        )
        .unwrap();
        let sino = op.forward(&truth).unwrap();
        let cells: Vec<(usize, usize)> = (0..op.cells())
            .map(|off| (off % op.angles().len() + 1, off / op.angles().len() + 1))
            .collect();
        let responses: Vec<DenseTensor> = (0..op.cells())
            .map(|off| DenseTensor::new(vec![1], vec![sino.values()[off].round()]).unwrap())
            .collect();
        let pet = PetProblem { op: op.clone(), cells, responses, response_dims: vec![1] };
        let res = reconstruct_mlem(&pet, 400, None).unwrap();
        // Forward-project the estimate and compare with the counts.
        let est_img = DenseTensor::new(vec![8, 8], res.b_hat.values().to_vec()).unwrap();
        let est_sino = op.forward(&est_img).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (e, o) in est_sino.values().iter().zip(sino.values()) {
            num += (e - o.round()) * (e - o.round());
            den += o.round() * o.round();
        }
        assert!((num / den).sqrt() <= 1e-3, "rel={}", (num / den).sqrt());
    }

    #[test]
    fn zero_noise_rank4_recovery_within_dynamic_range() {
        // 16x16 image, 2x2 response modes, rank-4 truth, full data, rounded
        // rates instead of Poisson draws: the rank-4 fit recovers the truth
        // within 5% of the image dynamic range, and the RMSE trajectory is
        // non-increasing over the final 50 sweeps.
        let n = 16usize;
        let op = RadonOperator::parallel_beam((n, n), n, 2 * n, Binning::Nearest).unwrap();
        let rects: [(f64, usize, usize, usize, usize); 3] =
            [(1.0, 2, 9, 3, 13), (2.0, 7, 14, 6, 10), (0.5, 4, 12, 1, 5)];
        let mut img = vec![0.5; n * n];
        for j in 0..n {
            for i in 0..n {
                for &(v, x0, x1, y0, y1) in &rects {
                    if i >= x0 && i < x1 && j >= y0 && j < y1 {
                        img[i + j * n] += v;
                    }
                }
            }
        }
        let gains = [30.0, 36.0, 39.0, 46.8]; // separable 2x2 response gain
        let mut values = Vec::with_capacity(n * n * 4);
        for &g in &gains {
            values.extend(img.iter().map(|v| v * g));
        }
        let truth = DenseTensor::new(vec![n, n, 2, 2], values).unwrap();
        // Rounded rates at every cell.
        let sinos: Vec<DenseTensor> = (0..4)
            .map(|e| {
                let slice = DenseTensor::new(
                    vec![n, n],
                    truth.values()[e * n * n..(e + 1) * n * n].to_vec(),
                )
                .unwrap();
                op.forward(&slice).unwrap()
            })
            .collect();
        let cells: Vec<(usize, usize)> = (0..op.cells())
            .map(|off| (off % op.angles().len() + 1, off / op.angles().len() + 1))
            .collect();
        let responses: Vec<DenseTensor> = (0..op.cells())
            .map(|off| {
                DenseTensor::new(
                    vec![2, 2],
                    sinos.iter().map(|s| s.values()[off].round()).collect(),
                )
                .unwrap()
            })
            .collect();
        let pet = PetProblem { op, cells, responses, response_dims: vec![2, 2] };
        let cfg = FitConfig {
            rank: 4,
            restarts: 2,
            outer_tol: 1e-15,
            inner_tol: 1e-8,
            inner_max_iter: 8,
            outer_max_sweeps: 80,
            seed: 31,
            ..FitConfig::default()
        };
        let res = reconstruct_ptotr(&pet, &cfg, Some(&truth)).unwrap();
        let range = truth.values().iter().copied().fold(f64::MIN, f64::max)
            - truth.values().iter().copied().fold(f64::MAX, f64::min);
        let final_rmse = *res.rmse_trajectory.last().unwrap();
        assert!(final_rmse <= 0.05 * range, "rmse={final_rmse} range={range}");
        let tail = &res.rmse_trajectory[res.rmse_trajectory.len() - 50..];
        for w in tail.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6), "tail rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn mlem_rmse_valley_on_noisy_subsampled_data() {
        // Sparse noisy data: the ML-EM RMSE dips and then climbs, so its
        // minimum sits strictly before the last iteration.
        let op = tiny_op(12);
        let truth = make_phantom(12, 12, PhantomKind::Blocks, 0.2).unwrap();
        let truth = DenseTensor::new(
            vec![12, 12],
            truth.values().iter().map(|v| v * 15.0).collect(),
        )
        .unwrap();
        let pet = simulate(&truth, &op, 0.3, 77).unwrap();
        let truth3 = DenseTensor::new(vec![12, 12, 1], truth.values().to_vec()).unwrap();
        let res = reconstruct_mlem(&pet, 300, Some(&truth3)).unwrap();
        let traj = &res.rmse_trajectory;
        let (argmin, min) = traj
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc });
        assert!(argmin < traj.len() - 1, "minimum at the last iteration");
        assert!(traj[traj.len() - 1] > min, "no rise after the minimum");
    }

    #[test]
    fn ptotr_reconstruction_tracks_truth_on_rank1_problem() {
        // Rank-1 truth, full data, large counts: the CP fit at rank 1 should
        // land near the truth.
        let op = tiny_op(8);
        let col = [4.0, 6.0, 8.0, 6.0, 4.0, 3.0, 2.0, 2.0];
        let row = [1.0, 2.0, 3.0, 3.0, 2.0, 1.0, 0.5, 0.5];
        let truth = DenseTensor::new(
            vec![8, 8],
            (0..64).map(|k| 480.0 * col[k % 8] * row[k / 8]).collect(),
        )
        .unwrap();
        let pet = simulate(&truth, &op, 1.0, 11).unwrap();
        let cfg = FitConfig {
            rank: 1,
            restarts: 2,
            outer_tol: 1e-9,
            inner_tol: 1e-6,
            inner_max_iter: 60,
            outer_max_sweeps: 200,
            seed: 4,
            ..FitConfig::default()
        };
        let truth3 = DenseTensor::new(vec![8, 8, 1], truth.values().to_vec()).unwrap();
        let res = reconstruct_ptotr(&pet, &cfg, Some(&truth)).unwrap();
        let rel = rmse(&res.b_hat, &truth3).unwrap()
            / (truth3.frobenius_norm() / (truth3.len() as f64).sqrt());
        assert!(rel <= 1e-2, "rel={rel}");
        assert!(!res.rmse_trajectory.is_empty());
        // RMSE per sweep is recorded for the winning restart.
        assert_eq!(res.rmse_trajectory.len(), res.fit.sweeps + 1);
    }
}
