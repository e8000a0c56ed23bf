//! Discrete parallel-beam Radon transform.
//!
//! Projection angles are uniform on `[0, pi)` and radial bins span the image
//! diagonal. Pixels are projected at their centers: with nearest binning the
//! whole pixel mass lands in one bin per angle, so each angle's sinogram row
//! sums to the total image mass exactly; linear binning splits the mass
//! between the two neighboring bins. The operator is linear by
//! construction and exposed both as a forward map and as per-cell covariate
//! images `R_(i1,i2)[n] = Radon(E_n)[i1,i2]`.

use crate::par;
use crate::tensor::{DenseTensor, MultiIndex, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RadonError {
    #[error("image is {got:?}, operator expects {want:?}")]
    ImageDims { want: (usize, usize), got: Vec<usize> },
    #[error("sinogram is {got:?}, operator produces {angles}x{bins}")]
    SinogramDims { angles: usize, bins: usize, got: Vec<usize> },
    #[error("geometry needs at least one angle and one radial bin")]
    EmptyGeometry,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binning {
    /// All pixel mass to the nearest radial bin (mass-conserving per angle).
    Nearest,
    /// Linear interpolation between the two neighboring bins.
    Linear,
}

/// Parallel-beam projection geometry acting linearly on 2-D images.
#[derive(Debug, Clone)]
pub struct RadonOperator {
    n1: usize,
    n2: usize,
    angles: Vec<f64>,
    radial_bins: usize,
    binning: Binning,
    s_max: f64,
}

impl RadonOperator {
    /// Angles `k pi / n_angles` for `k = 0..n_angles`.
    pub fn parallel_beam(
        image_dims: (usize, usize),
        n_angles: usize,
        radial_bins: usize,
        binning: Binning,
    ) -> Result<Self, RadonError> {
        if n_angles == 0 || radial_bins == 0 || image_dims.0 == 0 || image_dims.1 == 0 {
            return Err(RadonError::EmptyGeometry);
        }
        let angles = (0..n_angles)
            .map(|k| k as f64 * std::f64::consts::PI / n_angles as f64)
            .collect();
        let (n1, n2) = image_dims;
        // Half-diagonal of the pixel grid, padded so every projection of a
        // pixel center falls strictly inside (-s_max, s_max).
        let s_max = 0.5 * ((n1 * n1 + n2 * n2) as f64).sqrt() + 0.5;
        Ok(RadonOperator { n1, n2, angles, radial_bins: radial_bins.max(1), binning, s_max })
    }

    /// Default radial resolution: four bins per largest image extent.
    pub fn default_radial_bins(image_dims: (usize, usize)) -> usize {
        4 * image_dims.0.max(image_dims.1)
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn radial_bins(&self) -> usize {
        self.radial_bins
    }

    pub fn binning(&self) -> Binning {
        self.binning
    }

    pub fn sinogram_dims(&self) -> (usize, usize) {
        (self.angles.len(), self.radial_bins)
    }

    pub fn cells(&self) -> usize {
        self.angles.len() * self.radial_bins
    }

    #[inline]
    fn pixel_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            i as f64 - (self.n1 as f64 - 1.0) / 2.0,
            j as f64 - (self.n2 as f64 - 1.0) / 2.0,
        )
    }

    /// Radial-bin weights for one pixel at one angle, as (bin, weight) with
    /// at most two entries.
    #[inline]
    fn bin_weights(&self, angle: f64, x: f64, y: f64) -> [(usize, f64); 2] {
        let (sin, cos) = angle.sin_cos();
        let s = x * cos + y * sin;
        let b = self.radial_bins as f64;
        match self.binning {
            Binning::Nearest => {
                let idx = ((s + self.s_max) / (2.0 * self.s_max) * b).floor();
                let idx = (idx.max(0.0) as usize).min(self.radial_bins - 1);
                [(idx, 1.0), (0, 0.0)]
            }
            Binning::Linear => {
                let pos = (s + self.s_max) / (2.0 * self.s_max) * b - 0.5;
                let lo = pos.floor();
                let frac = pos - lo;
                let lo_idx = lo as isize;
                let mut out = [(0usize, 0.0); 2];
                if lo_idx >= 0 && (lo_idx as usize) < self.radial_bins {
                    out[0] = (lo_idx as usize, 1.0 - frac);
                }
                let hi_idx = lo_idx + 1;
                if hi_idx >= 0 && (hi_idx as usize) < self.radial_bins {
                    out[1] = (hi_idx as usize, frac);
                }
                out
            }
        }
    }

    /// Sinogram of line-integral mass, shape `(angles, radial_bins)`.
    pub fn forward(&self, image: &DenseTensor) -> Result<DenseTensor, RadonError> {
        self.check_image(image)?;
        let a = self.angles.len();
        let rows = par::map_indexed(a, |k| {
            let angle = self.angles[k];
            let mut row = vec![0.0; self.radial_bins];
            for j in 0..self.n2 {
                for i in 0..self.n1 {
                    let v = image.values()[i + j * self.n1];
                    if v == 0.0 {
                        continue;
                    }
                    let (x, y) = self.pixel_center(i, j);
                    for (bin, wgt) in self.bin_weights(angle, x, y) {
                        if wgt != 0.0 {
                            row[bin] += v * wgt;
                        }
                    }
                }
            }
            row
        });
        let mut sino = DenseTensor::zeros(&[a, self.radial_bins])?;
        for (k, row) in rows.iter().enumerate() {
            for (bin, &v) in row.iter().enumerate() {
                sino.values_mut()[k + bin * a] = v;
            }
        }
        Ok(sino)
    }

    /// Sinogram of the indicator image at the 1-based pixel multi-index.
    pub fn basis(&self, n: &MultiIndex) -> Result<DenseTensor, RadonError> {
        let idx = n.indices();
        if idx.len() != 2 || idx[0] < 1 || idx[0] > self.n1 || idx[1] < 1 || idx[1] > self.n2 {
            return Err(RadonError::Tensor(TensorError::IndexOutOfRange {
                index: idx.to_vec(),
                dims: vec![self.n1, self.n2],
            }));
        }
        let a = self.angles.len();
        let mut sino = DenseTensor::zeros(&[a, self.radial_bins])?;
        let (x, y) = self.pixel_center(idx[0] - 1, idx[1] - 1);
        for (k, &angle) in self.angles.iter().enumerate() {
            for (bin, wgt) in self.bin_weights(angle, x, y) {
                if wgt != 0.0 {
                    sino.values_mut()[k + bin * a] += wgt;
                }
            }
        }
        Ok(sino)
    }

    /// Covariate image of one sinogram cell (1-based angle and bin):
    /// `R_(i1,i2)[n] = Radon(E_n)[i1,i2]`.
    pub fn covariate(&self, i1: usize, i2: usize) -> Result<DenseTensor, RadonError> {
        if i1 < 1 || i1 > self.angles.len() || i2 < 1 || i2 > self.radial_bins {
            return Err(RadonError::SinogramDims {
                angles: self.angles.len(),
                bins: self.radial_bins,
                got: vec![i1, i2],
            });
        }
        let angle = self.angles[i1 - 1];
        let want = i2 - 1;
        let mut img = DenseTensor::zeros(&[self.n1, self.n2])?;
        for j in 0..self.n2 {
            for i in 0..self.n1 {
                let (x, y) = self.pixel_center(i, j);
                for (bin, wgt) in self.bin_weights(angle, x, y) {
                    if wgt != 0.0 && bin == want {
                        img.values_mut()[i + j * self.n1] += wgt;
                    }
                }
            }
        }
        Ok(img)
    }

    /// Adjoint map (back-projection): `img[n] = sum_{a,b} w(n,a,b) sino[a,b]`.
    pub fn adjoint(&self, sino: &DenseTensor) -> Result<DenseTensor, RadonError> {
        let a = self.angles.len();
        if sino.dims() != [a, self.radial_bins] {
            return Err(RadonError::SinogramDims {
                angles: a,
                bins: self.radial_bins,
                got: sino.dims().to_vec(),
            });
        }
        let values = par::map_indexed(self.n1 * self.n2, |off| {
            let (i, j) = (off % self.n1, off / self.n1);
            let (x, y) = self.pixel_center(i, j);
            let mut acc = 0.0;
            for (k, &angle) in self.angles.iter().enumerate() {
                for (bin, wgt) in self.bin_weights(angle, x, y) {
                    if wgt != 0.0 {
                        acc += wgt * sino.values()[k + bin * a];
                    }
                }
            }
            acc
        });
        Ok(DenseTensor::new(vec![self.n1, self.n2], values)?)
    }

    fn check_image(&self, image: &DenseTensor) -> Result<(), RadonError> {
        if image.dims() != [self.n1, self.n2] {
            return Err(RadonError::ImageDims {
                want: (self.n1, self.n2),
                got: image.dims().to_vec(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::rng_for;
    use rand::Rng;

    fn random_image(seed: u64, n1: usize, n2: usize) -> DenseTensor {
        let mut rng = rng_for(seed, "radon", 0);
        DenseTensor::new(
            vec![n1, n2],
            (0..n1 * n2).map(|_| rng.random_range(0.0..3.0)).collect(),
        )
        .unwrap()
    }

    fn op(n1: usize, n2: usize, binning: Binning) -> RadonOperator {
        RadonOperator::parallel_beam((n1, n2), 8, 4 * n1.max(n2), binning).unwrap()
    }

    #[test]
    fn zero_image_gives_zero_sinogram() {
        let o = op(6, 6, Binning::Nearest);
        let sino = o.forward(&DenseTensor::zeros(&[6, 6]).unwrap()).unwrap();
        assert!(sino.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nearest_binning_conserves_mass_per_angle() {
        let img = random_image(1, 9, 7);
        let total: f64 = img.values().iter().sum();
        let o = op(9, 7, Binning::Nearest);
        let sino = o.forward(&img).unwrap();
        let a = o.angles().len();
        for k in 0..a {
            let row: f64 = (0..o.radial_bins()).map(|b| sino.values()[k + b * a]).sum();
            assert!((row - total).abs() <= 1e-9 * total.max(1.0), "angle {k}");
        }
    }

    #[test]
    fn forward_is_linear() {
        let x = random_image(2, 8, 8);
        let y = random_image(3, 8, 8);
        for binning in [Binning::Nearest, Binning::Linear] {
            let o = op(8, 8, binning);
            let (a, b) = (1.7, -0.4);
            let mix = DenseTensor::new(
                vec![8, 8],
                x.values()
                    .iter()
                    .zip(y.values())
                    .map(|(u, v)| a * u + b * v)
                    .collect(),
            )
            .unwrap();
            let lhs = o.forward(&mix).unwrap();
            let rx = o.forward(&x).unwrap();
            let ry = o.forward(&y).unwrap();
            let scale = lhs.frobenius_norm().max(1.0);
            for ((l, u), v) in lhs.values().iter().zip(rx.values()).zip(ry.values()) {
                assert!((l - (a * u + b * v)).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn basis_has_one_unit_entry_per_angle_with_nearest_binning() {
        let o = op(5, 5, Binning::Nearest);
        let a = o.angles().len();
        for i in 1..=5 {
            for j in 1..=5 {
                let sino = o.basis(&MultiIndex::new(vec![i, j])).unwrap();
                for k in 0..a {
                    let row: Vec<f64> =
                        (0..o.radial_bins()).map(|b| sino.values()[k + b * a]).collect();
                    let nonzero: Vec<&f64> = row.iter().filter(|&&v| v != 0.0).collect();
                    assert_eq!(nonzero.len(), 1);
                    assert_eq!(*nonzero[0], 1.0);
                }
            }
        }
    }

    #[test]
    fn basis_assembly_reproduces_forward() {
        let img = random_image(4, 8, 8);
        for binning in [Binning::Nearest, Binning::Linear] {
            let o = op(8, 8, binning);
            let direct = o.forward(&img).unwrap();
            let mut assembled = DenseTensor::zeros(&[o.angles().len(), o.radial_bins()]).unwrap();
            for i in 1..=8 {
                for j in 1..=8 {
                    let w = img.values()[(i - 1) + (j - 1) * 8];
                    let basis = o.basis(&MultiIndex::new(vec![i, j])).unwrap();
                    for (acc, &b) in assembled.values_mut().iter_mut().zip(basis.values()) {
                        *acc += w * b;
                    }
                }
            }
            let scale = direct.frobenius_norm().max(1.0);
            assert!(direct.max_abs_diff(&assembled) <= 1e-10 * scale);
        }
    }

    #[test]
    fn adjoint_identity_against_forward() {
        // <R x, y> == <x, R^T y> for independent forward and adjoint paths.
        let mut rng = rng_for(5, "radon-adj", 0);
        for trial in 0..20 {
            let binning = if trial % 2 == 0 { Binning::Nearest } else { Binning::Linear };
            let o = op(7, 6, binning);
            let x = DenseTensor::new(
                vec![7, 6],
                (0..42).map(|_| rng.random_range(-1.0..2.0)).collect(),
            )
            .unwrap();
            let y = DenseTensor::new(
                vec![o.angles().len(), o.radial_bins()],
                (0..o.cells()).map(|_| rng.random_range(-1.0..2.0)).collect(),
            )
            .unwrap();
            let fx = o.forward(&x).unwrap();
            let aty = o.adjoint(&y).unwrap();
            let lhs: f64 = fx.values().iter().zip(y.values()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.values().iter().zip(aty.values()).map(|(a, b)| a * b).sum();
            assert!(
                (lhs - rhs).abs() <= 1e-8 * lhs.abs().max(1.0),
                "trial {trial}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn covariate_matches_basis_transpose() {
        let o = op(5, 4, Binning::Nearest);
        // R_(i1,i2)[n] == basis(n)[i1,i2] for every cell and pixel.
        for i1 in 1..=o.angles().len() {
            for i2 in 1..=o.radial_bins() {
                let cov = o.covariate(i1, i2).unwrap();
                for i in 1..=5 {
                    for j in 1..=4 {
                        let basis = o.basis(&MultiIndex::new(vec![i, j])).unwrap();
                        let want = basis
                            .get(&MultiIndex::new(vec![i1, i2]))
                            .unwrap();
                        let got = cov.get(&MultiIndex::new(vec![i, j])).unwrap();
                        assert_eq!(got, want);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let o = op(4, 4, Binning::Nearest);
        assert!(o.forward(&DenseTensor::zeros(&[3, 4]).unwrap()).is_err());
        assert!(o.adjoint(&DenseTensor::zeros(&[2, 2]).unwrap()).is_err());
        assert!(o.basis(&MultiIndex::new(vec![5, 1])).is_err());
        assert!(o.covariate(0, 1).is_err());
    }
}
