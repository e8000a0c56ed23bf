//! Dense and CP tensor representations.
//!
//! Storage is column-major (mode-1 index varies fastest), so `vectorize` of a
//! tensor is exactly its flat value buffer and the matricization /
//! Khatri-Rao identities reduce to index arithmetic. Multi-indices and mode
//! numbers are 1-based in the public API; internal offsets are 0-based.
//!
//! Khatri-Rao factor lists for all matricized identities are taken in
//! decreasing mode order (Kolda-Bader convention): for a tensor with factors
//! `A(1)..A(N)`,
//!
//! ```text
//! vec(T)  = khatri_rao([A(N), ..., A(1)]) . lambda
//! T_(n)   = A(n) diag(lambda) khatri_rao([A(N), .., A(n+1), A(n-1), .., A(1)])^T
//! ```

use crate::par;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("dimension list must be non-empty with every extent >= 1, got {0:?}")]
    BadDims(Vec<usize>),
    #[error("value buffer has length {got}, dims {dims:?} require {want}")]
    BadLength { dims: Vec<usize>, want: usize, got: usize },
    #[error("mode {mode} out of range for order-{order} tensor (modes are 1-based)")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("multi-index {index:?} out of range for dims {dims:?} (indices are 1-based)")]
    IndexOutOfRange { index: Vec<usize>, dims: Vec<usize> },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("Khatri-Rao operands must share a column count, got {0:?}")]
    KhatriRaoColumns(Vec<usize>),
    #[error("CP tensor invalid: {0}")]
    BadCp(String),
    #[error("factor column {column} of factor {factor} has non-positive sum; input corrupt")]
    CorruptFactor { factor: usize, column: usize },
}

/// A 1-based element multi-index `(m_1, ..., m_P)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn new(indices: Vec<usize>) -> Self {
        MultiIndex(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }
}

/// Dense column-major matrix. Row/column accessors are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Build from a column-major buffer.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length must equal rows*cols");
        Matrix { rows, cols, data }
    }

    /// Build from rows given as nested slices (row-major literal), handy in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let nr = rows.len();
        let nc = if nr == 0 { 0 } else { rows[0].len() };
        Matrix::from_fn(nr, nc, |r, c| rows[r][c])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r + c * self.rows]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r + c * self.rows] = v;
    }

    #[inline]
    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        let rows = self.rows;
        &mut self.data[c * rows..(c + 1) * rows]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self * other`, column-parallel with a sequential inner accumulation.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let m = self.rows;
        let n = other.cols;
        let mut out = vec![0.0; m * n];
        par::for_each_chunk_mut(&mut out, m, |j, out_col| {
            let b_col = other.col(j);
            for (k, &bkj) in b_col.iter().enumerate() {
                if bkj == 0.0 {
                    continue;
                }
                let a_col = self.col(k);
                for (o, &a) in out_col.iter_mut().zip(a_col) {
                    *o += a * bkj;
                }
            }
        });
        Matrix { rows: m, cols: n, data: out }
    }

    /// Column sums, `1^T M` as a vector.
    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.cols).map(|c| self.col(c).iter().sum()).collect()
    }

    /// Row sums, `M 1` as a vector.
    pub fn row_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for c in 0..self.cols {
            for (o, &v) in out.iter_mut().zip(self.col(c)) {
                *o += v;
            }
        }
        out
    }

    /// Scale column `c` by `s`.
    pub fn scale_col(&mut self, c: usize, s: f64) {
        for v in self.col_mut(c) {
            *v *= s;
        }
    }

    /// `self * diag(d)` (scales columns).
    pub fn mul_diag(&self, d: &[f64]) -> Matrix {
        assert_eq!(d.len(), self.cols);
        let mut out = self.clone();
        for (c, &s) in d.iter().enumerate() {
            out.scale_col(c, s);
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Dense tensor with explicit extents, values stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self, TensorError> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(TensorError::BadDims(dims));
        }
        let want: usize = dims.iter().product();
        if values.len() != want {
            return Err(TensorError::BadLength { dims, want, got: values.len() });
        }
        Ok(DenseTensor { dims, values })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self, TensorError> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(TensorError::BadDims(dims.to_vec()));
        }
        let len = dims.iter().product();
        Ok(DenseTensor { dims: dims.to_vec(), values: vec![0.0; len] })
    }

    pub fn constant(dims: &[usize], v: f64) -> Result<Self, TensorError> {
        let mut t = Self::zeros(dims)?;
        t.values.fill(v);
        Ok(t)
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(v: f64) -> Self {
        DenseTensor { dims: vec![1], values: vec![v] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The flat column-major buffer; identical to `vec(T)`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Flat offset of a 1-based multi-index.
    pub fn offset(&self, idx: &MultiIndex) -> Result<usize, TensorError> {
        if idx.0.len() != self.dims.len()
            || idx.0.iter().zip(&self.dims).any(|(&i, &d)| i < 1 || i > d)
        {
            return Err(TensorError::IndexOutOfRange {
                index: idx.0.clone(),
                dims: self.dims.clone(),
            });
        }
        let mut off = 0;
        let mut stride = 1;
        for (&i, &d) in idx.0.iter().zip(&self.dims) {
            off += (i - 1) * stride;
            stride *= d;
        }
        Ok(off)
    }

    pub fn get(&self, idx: &MultiIndex) -> Result<f64, TensorError> {
        Ok(self.values[self.offset(idx)?])
    }

    pub fn set(&mut self, idx: &MultiIndex, v: f64) -> Result<(), TensorError> {
        let off = self.offset(idx)?;
        self.values[off] = v;
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Mode-`mode` unfolding (1-based mode). Element `(m_1..m_P)` lands at
    /// row `m_mode`, column `1 + sum_{k != mode} (m_k - 1) J_k` with
    /// `J_k = prod_{s < k, s != mode} M_s`.
    pub fn matricize(&self, mode: usize) -> Result<Matrix, TensorError> {
        if mode < 1 || mode > self.order() {
            return Err(TensorError::ModeOutOfRange { mode, order: self.order() });
        }
        let p = mode - 1;
        let mp = self.dims[p];
        let inner: usize = self.dims[..p].iter().product();
        let outer: usize = self.dims[p + 1..].iter().product();
        let cols = inner * outer;
        let mut out = vec![0.0; mp * cols];
        // Flat offset = inner_idx + mp_idx*inner + outer_idx*inner*mp;
        // column     = inner_idx + outer_idx*inner.
        for o in 0..outer {
            for r in 0..mp {
                let src = (o * mp + r) * inner;
                for i in 0..inner {
                    out[r + (o * inner + i) * mp] = self.values[src + i];
                }
            }
        }
        Ok(Matrix { rows: mp, cols, data: out })
    }
}

/// Inverse of [`DenseTensor::matricize`]: restore a tensor with extents
/// `dims` from its mode-`mode` unfolding.
pub fn dematricize(m: &Matrix, dims: &[usize], mode: usize) -> Result<DenseTensor, TensorError> {
    if mode < 1 || mode > dims.len() {
        return Err(TensorError::ModeOutOfRange { mode, order: dims.len() });
    }
    let p = mode - 1;
    let mp = dims[p];
    let inner: usize = dims[..p].iter().product();
    let outer: usize = dims[p + 1..].iter().product();
    if m.rows() != mp || m.cols() != inner * outer {
        return Err(TensorError::DimMismatch(format!(
            "unfolding is {}x{}, dims {:?} at mode {} require {}x{}",
            m.rows(),
            m.cols(),
            dims,
            mode,
            mp,
            inner * outer
        )));
    }
    let mut values = vec![0.0; mp * inner * outer];
    for o in 0..outer {
        for r in 0..mp {
            let dst = (o * mp + r) * inner;
            for i in 0..inner {
                values[dst + i] = m.get(r, o * inner + i);
            }
        }
    }
    DenseTensor::new(dims.to_vec(), values)
}

/// Khatri-Rao product of the given matrices in list order: column `r` of the
/// result is the Kronecker product of the operands' `r`-th columns, with
/// later list entries varying fastest. Callers pass factors in decreasing
/// mode order so this pairs with the column-major vec convention.
///
/// The empty product is the `1 x R`... rank cannot be inferred from nothing,
/// so an explicit `rank_if_empty` is required for the degenerate case.
pub fn khatri_rao(mats: &[&Matrix], rank_if_empty: usize) -> Result<Matrix, TensorError> {
    if mats.is_empty() {
        return Ok(Matrix::from_fn(1, rank_if_empty, |_, _| 1.0));
    }
    let r = mats[0].cols();
    if mats.iter().any(|m| m.cols() != r) {
        return Err(TensorError::KhatriRaoColumns(
            mats.iter().map(|m| m.cols()).collect(),
        ));
    }
    let rows: usize = mats.iter().map(|m| m.rows()).product();
    let mut out = Matrix::zeros(rows, r);
    for c in 0..r {
        let mut acc = vec![1.0];
        for m in mats {
            let col = m.col(c);
            let mut next = Vec::with_capacity(acc.len() * col.len());
            for &a in &acc {
                for &b in col {
                    next.push(a * b);
                }
            }
            acc = next;
        }
        out.col_mut(c).copy_from_slice(&acc);
    }
    Ok(out)
}

/// Rank-R CP representation: positive weights plus positive factor matrices
/// over covariate modes (`N_q x R`) and response modes (`M_p x R`).
#[derive(Debug, Clone, PartialEq)]
pub struct CpTensor {
    weights: Vec<f64>,
    covariate_factors: Vec<Matrix>,
    response_factors: Vec<Matrix>,
}

impl CpTensor {
    pub fn new(
        weights: Vec<f64>,
        covariate_factors: Vec<Matrix>,
        response_factors: Vec<Matrix>,
    ) -> Result<Self, TensorError> {
        let r = weights.len();
        if r == 0 {
            return Err(TensorError::BadCp("rank must be >= 1".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(TensorError::BadCp("weights must be strictly positive".into()));
        }
        if covariate_factors.is_empty() && response_factors.is_empty() {
            return Err(TensorError::BadCp("at least one factor matrix required".into()));
        }
        for f in covariate_factors.iter().chain(&response_factors) {
            if f.cols() != r {
                return Err(TensorError::BadCp(format!(
                    "factor has {} columns, expected rank {}",
                    f.cols(),
                    r
                )));
            }
            if f.rows() == 0 {
                return Err(TensorError::BadCp("factor with zero rows".into()));
            }
            if f.data().iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(TensorError::BadCp(
                    "factor entries must be strictly positive and finite".into(),
                ));
            }
        }
        Ok(CpTensor { weights, covariate_factors, response_factors })
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn covariate_factors(&self) -> &[Matrix] {
        &self.covariate_factors
    }

    pub fn response_factors(&self) -> &[Matrix] {
        &self.response_factors
    }

    pub fn covariate_dims(&self) -> Vec<usize> {
        self.covariate_factors.iter().map(Matrix::rows).collect()
    }

    pub fn response_dims(&self) -> Vec<usize> {
        self.response_factors.iter().map(Matrix::rows).collect()
    }

    /// Combined extents `(N_1..N_Q, M_1..M_P)`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = self.covariate_dims();
        d.extend(self.response_dims());
        d
    }

    /// Khatri-Rao of the covariate factors in decreasing mode order
    /// (`1 x R` of ones when there are no covariate modes).
    pub fn covariate_khatri_rao(&self) -> Matrix {
        let mats: Vec<&Matrix> = self.covariate_factors.iter().rev().collect();
        khatri_rao(&mats, self.rank()).expect("validated factors")
    }

    /// Khatri-Rao of the response factors in decreasing mode order.
    pub fn response_khatri_rao(&self) -> Matrix {
        let mats: Vec<&Matrix> = self.response_factors.iter().rev().collect();
        khatri_rao(&mats, self.rank()).expect("validated factors")
    }

    /// Materialize the full tensor with entries
    /// `sum_r lambda_r prod_q V(q)[n_q,r] prod_p U(p)[m_p,r]`.
    pub fn reconstruct(&self) -> DenseTensor {
        let dims = self.dims();
        let all: Vec<&Matrix> = self
            .response_factors
            .iter()
            .rev()
            .chain(self.covariate_factors.iter().rev())
            .collect();
        let kr = khatri_rao(&all, self.rank()).expect("validated factors");
        let len: usize = dims.iter().product();
        let mut values = vec![0.0; len];
        for (r, &w) in self.weights.iter().enumerate() {
            for (v, &k) in values.iter_mut().zip(kr.col(r)) {
                *v += w * k;
            }
        }
        DenseTensor::new(dims, values).expect("consistent dims")
    }

    /// Partial contraction `<x|B>` computed in factored form:
    /// `vec(out) = U_kr diag(lambda) V_kr^T vec(x)` without materializing B.
    pub fn contract(&self, x: &DenseTensor) -> Result<DenseTensor, TensorError> {
        let nd = self.covariate_dims();
        let effective_x: &[usize] = if nd.is_empty() { &[1] } else { &nd };
        if x.dims() != effective_x {
            return Err(TensorError::DimMismatch(format!(
                "covariate dims {:?} do not match coefficient leading dims {:?}",
                x.dims(),
                effective_x
            )));
        }
        let vkr = self.covariate_khatri_rao();
        let ukr = self.response_khatri_rao();
        let r = self.rank();
        // w_r = (V_kr^T vec(x))_r
        let mut w = vec![0.0; r];
        for (c, wr) in w.iter_mut().enumerate() {
            *wr = vkr.col(c).iter().zip(x.values()).map(|(a, b)| a * b).sum();
        }
        let mut out = vec![0.0; ukr.rows()];
        for (c, &wr) in w.iter().enumerate() {
            let s = self.weights[c] * wr;
            for (o, &u) in out.iter_mut().zip(ukr.col(c)) {
                *o += s * u;
            }
        }
        let out_dims = if self.response_factors.is_empty() {
            vec![1]
        } else {
            self.response_dims()
        };
        DenseTensor::new(out_dims, out)
    }

    /// Scale every factor column to sum to one, absorb the sums into the
    /// weights, and sort weights descending (stable). The reconstructed
    /// tensor is unchanged.
    pub fn normalized(&self) -> Result<CpTensor, TensorError> {
        let r = self.rank();
        let mut weights = self.weights.clone();
        let mut cov = self.covariate_factors.clone();
        let mut resp = self.response_factors.clone();
        for (fi, f) in cov.iter_mut().chain(resp.iter_mut()).enumerate() {
            for c in 0..r {
                let s: f64 = f.col(c).iter().sum();
                if !(s > 0.0) {
                    return Err(TensorError::CorruptFactor { factor: fi + 1, column: c + 1 });
                }
                // Columns already summing to one up to rounding are left
                // untouched so normalization is exactly idempotent.
                if (s - 1.0).abs() > 1e-12 {
                    f.scale_col(c, 1.0 / s);
                    weights[c] *= s;
                }
            }
        }
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&a, &b| {
            weights[b].partial_cmp(&weights[a]).expect("finite weights")
        });
        let permuted_weights: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
        let permute = |m: &Matrix| -> Matrix {
            let mut out = Matrix::zeros(m.rows(), r);
            for (dst, &src) in order.iter().enumerate() {
                out.col_mut(dst).copy_from_slice(m.col(src));
            }
            out
        };
        let cov: Vec<Matrix> = cov.iter().map(&permute).collect();
        let resp: Vec<Matrix> = resp.iter().map(&permute).collect();
        CpTensor::new(permuted_weights, cov, resp)
    }

    /// True when every factor column sums to one within `tol` and the
    /// weights are non-increasing.
    pub fn is_normalized(&self, tol: f64) -> bool {
        let cols_ok = self
            .covariate_factors
            .iter()
            .chain(&self.response_factors)
            .all(|f| (0..self.rank()).all(|c| (f.col(c).iter().sum::<f64>() - 1.0).abs() <= tol));
        let sorted = self.weights.windows(2).all(|w| w[0] >= w[1]);
        cols_ok && sorted
    }
}

/// Partial tensor contraction against a dense coefficient whose leading
/// dims equal `x.dims()`: `out_m = sum_n x_n b_{n,m}`.
pub fn partial_contract_dense(
    x: &DenseTensor,
    b: &DenseTensor,
) -> Result<DenseTensor, TensorError> {
    let q = x.order();
    if b.order() < q || b.dims()[..q] != *x.dims() {
        return Err(TensorError::DimMismatch(format!(
            "coefficient leading dims {:?} do not match covariate dims {:?}",
            &b.dims()[..q.min(b.order())],
            x.dims()
        )));
    }
    let n: usize = x.len();
    let out_dims: Vec<usize> = if b.order() == q {
        vec![1]
    } else {
        b.dims()[q..].to_vec()
    };
    let m: usize = out_dims.iter().product();
    let xv = x.values();
    let out = par::map_indexed(m, |j| {
        let col = &b.values()[j * n..(j + 1) * n];
        let mut acc = 0.0;
        for (a, c) in xv.iter().zip(col) {
            acc += a * c;
        }
        acc
    });
    DenseTensor::new(out_dims, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> DenseTensor {
        let len = dims.iter().product();
        let values = (0..len).map(|_| rng.random_range(-2.0..2.0)).collect();
        DenseTensor::new(dims.to_vec(), values).unwrap()
    }

    fn random_cp(rng: &mut ChaCha8Rng, cov: &[usize], resp: &[usize], r: usize) -> CpTensor {
        let weights = (0..r).map(|_| rng.random_range(0.5..3.0)).collect();
        let f = |rng: &mut ChaCha8Rng, n: usize| {
            Matrix::from_fn(n, r, |_, _| rng.random_range(0.1..2.0))
        };
        let cov: Vec<Matrix> = cov.iter().map(|&n| f(rng, n)).collect();
        let resp: Vec<Matrix> = resp.iter().map(|&n| f(rng, n)).collect();
        CpTensor::new(weights, cov, resp).unwrap()
    }

    #[test]
    fn matricize_mode1_of_matrix_is_identity() {
        let t = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = t.matricize(1).unwrap();
        assert_eq!(m.data(), t.values());
        assert_eq!((m.rows(), m.cols()), (2, 2));
    }

    #[test]
    fn matricize_matches_index_map_oracle() {
        // 2x3x4 sequential values, checked against the Kolda-Bader formula
        // evaluated one index tuple at a time.
        let dims = [2usize, 3, 4];
        let values: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let t = DenseTensor::new(dims.to_vec(), values).unwrap();
        for mode in 1..=3 {
            let m = t.matricize(mode).unwrap();
            for m1 in 1..=dims[0] {
                for m2 in 1..=dims[1] {
                    for m3 in 1..=dims[2] {
                        let idx = [m1, m2, m3];
                        let row = idx[mode - 1] - 1;
                        let mut col = 0;
                        let mut jk = 1;
                        for k in 0..3 {
                            if k == mode - 1 {
                                continue;
                            }
                            col += (idx[k] - 1) * jk;
                            jk *= dims[k];
                        }
                        let want = t.get(&MultiIndex::new(idx.to_vec())).unwrap();
                        assert_eq!(m.get(row, col), want);
                    }
                }
            }
        }
    }

    #[test]
    fn dematricize_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let order = rng.random_range(1..=4);
            let dims: Vec<usize> = (0..order).map(|_| rng.random_range(1..=4)).collect();
            let t = random_tensor(&mut rng, &dims);
            for mode in 1..=order {
                let m = t.matricize(mode).unwrap();
                let back = dematricize(&m, &dims, mode).unwrap();
                assert_eq!(back, t);
            }
        }
    }

    #[test]
    fn matricize_rejects_bad_mode() {
        let t = DenseTensor::zeros(&[2, 2]).unwrap();
        assert!(matches!(t.matricize(0), Err(TensorError::ModeOutOfRange { .. })));
        assert!(matches!(t.matricize(3), Err(TensorError::ModeOutOfRange { .. })));
    }

    #[test]
    fn khatri_rao_single_matrix_is_identity() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let kr = khatri_rao(&[&a], 2).unwrap();
        assert_eq!(kr, a);
    }

    #[test]
    fn khatri_rao_two_columns() {
        let a = Matrix::from_rows(&[&[1.0], &[2.0]]);
        let b = Matrix::from_rows(&[&[3.0], &[4.0]]);
        let kr = khatri_rao(&[&a, &b], 1).unwrap();
        assert_eq!(kr.data(), &[3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn khatri_rao_rejects_column_mismatch() {
        let a = Matrix::zeros(2, 2);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(
            khatri_rao(&[&a, &b], 2),
            Err(TensorError::KhatriRaoColumns(_))
        ));
    }

    #[test]
    fn cp_reconstruct_uniform_rank1() {
        let c = CpTensor::new(
            vec![6.0],
            vec![],
            vec![
                Matrix::from_rows(&[&[0.5], &[0.5]]),
                Matrix::from_rows(&[&[1.0 / 3.0], &[1.0 / 3.0], &[1.0 / 3.0]]),
            ],
        )
        .unwrap();
        let t = c.reconstruct();
        assert_eq!(t.dims(), &[2, 3]);
        for &v in t.values() {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn cp_reconstruct_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = random_cp(&mut rng, &[], &[2, 2, 2], 2);
        let t = c.reconstruct();
        let u = c.response_factors();
        for m1 in 0..2 {
            for m2 in 0..2 {
                for m3 in 0..2 {
                    let mut want = 0.0;
                    for r in 0..2 {
                        want += c.weights()[r]
                            * u[0].get(m1, r)
                            * u[1].get(m2, r)
                            * u[2].get(m3, r);
                    }
                    let got = t
                        .get(&MultiIndex::new(vec![m1 + 1, m2 + 1, m3 + 1]))
                        .unwrap();
                    assert!((want - got).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cp_reconstruct_linear_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let c = random_cp(&mut rng, &[2], &[3], 2);
        let doubled = CpTensor::new(
            c.weights().iter().map(|w| 2.0 * w).collect(),
            c.covariate_factors().to_vec(),
            c.response_factors().to_vec(),
        )
        .unwrap();
        let a = c.reconstruct();
        let b = doubled.reconstruct();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matricized_reconstruction_pins_khatri_rao_order() {
        // T_(p) == U(p) diag(lambda) KR(decreasing, omit p)^T for CP tensors
        // with response modes only.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let dims: Vec<usize> = (0..3).map(|_| rng.random_range(2..=4)).collect();
            let c = random_cp(&mut rng, &[], &dims, 2);
            let t = c.reconstruct();
            for p in 1..=dims.len() {
                let unfolded = t.matricize(p).unwrap();
                let omit: Vec<&Matrix> = c
                    .response_factors()
                    .iter()
                    .enumerate()
                    .rev()
                    .filter(|(s, _)| *s != p - 1)
                    .map(|(_, m)| m)
                    .collect();
                let kr = khatri_rao(&omit, c.rank()).unwrap();
                let want = c.response_factors()[p - 1]
                    .mul_diag(c.weights())
                    .matmul(&kr.transpose());
                assert!(unfolded.max_abs_diff(&want) < 1e-12);
            }
        }
    }

    #[test]
    fn contract_zero_covariate_gives_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let b = random_cp(&mut rng, &[3], &[2, 2], 2);
        let x = DenseTensor::zeros(&[3]).unwrap();
        let out = b.contract(&x).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_contract_small_example() {
        // x = [1,2]; b (2x3) = [[1,0,1],[0,1,1]] row-wise -> out = [1,2,3].
        let x = DenseTensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = DenseTensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let out = partial_contract_dense(&x, &b).unwrap();
        assert_eq!(out.dims(), &[3]);
        assert_eq!(out.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn cp_contract_matches_dense_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let q = rng.random_range(1..=2);
            let p = rng.random_range(1..=2);
            let cov: Vec<usize> = (0..q).map(|_| rng.random_range(1..=3)).collect();
            let resp: Vec<usize> = (0..p).map(|_| rng.random_range(1..=3)).collect();
            let b = random_cp(&mut rng, &cov, &resp, 2);
            let x = random_tensor(&mut rng, &cov);
            let via_cp = b.contract(&x).unwrap();
            let via_dense = partial_contract_dense(&x, &b.reconstruct()).unwrap();
            let scale = via_dense.frobenius_norm().max(1e-12);
            assert!(via_cp.max_abs_diff(&via_dense) / scale <= 1e-10);
        }
    }

    #[test]
    fn contract_is_linear_in_x() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let b = random_cp(&mut rng, &[2, 3], &[2], 3);
        let x1 = random_tensor(&mut rng, &[2, 3]);
        let x2 = random_tensor(&mut rng, &[2, 3]);
        let (a, bb) = (1.3, -0.7);
        let mix = DenseTensor::new(
            vec![2, 3],
            x1.values()
                .iter()
                .zip(x2.values())
                .map(|(u, v)| a * u + bb * v)
                .collect(),
        )
        .unwrap();
        let lhs = b.contract(&mix).unwrap();
        let r1 = b.contract(&x1).unwrap();
        let r2 = b.contract(&x2).unwrap();
        for ((l, u), v) in lhs.values().iter().zip(r1.values()).zip(r2.values()) {
            assert!((l - (a * u + bb * v)).abs() < 1e-10);
        }
    }

    #[test]
    fn normalize_scaling_identity() {
        let c = CpTensor::new(
            vec![1.0],
            vec![],
            vec![Matrix::from_rows(&[&[2.0], &[2.0]])],
        )
        .unwrap();
        let n = c.normalized().unwrap();
        assert_eq!(n.weights(), &[4.0]);
        assert_eq!(n.response_factors()[0].data(), &[0.5, 0.5]);
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let c = random_cp(&mut rng, &[2], &[3, 2], 3).normalized().unwrap();
        let again = c.normalized().unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn normalize_preserves_reconstruction_and_sorts() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..30 {
            let c = random_cp(&mut rng, &[2, 2], &[3], 3);
            let n = c.normalized().unwrap();
            assert!(n.is_normalized(1e-10));
            let a = c.reconstruct();
            let b = n.reconstruct();
            assert!(a.max_abs_diff(&b) <= 1e-12 * (1.0 + a.frobenius_norm()));
            for w in n.weights().windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn dense_tensor_validates() {
        assert!(DenseTensor::new(vec![], vec![]).is_err());
        assert!(DenseTensor::new(vec![2, 0], vec![]).is_err());
        assert!(DenseTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        let t = DenseTensor::zeros(&[2, 2]).unwrap();
        assert!(t.get(&MultiIndex::new(vec![3, 1])).is_err());
        assert!(t.get(&MultiIndex::new(vec![0, 1])).is_err());
    }

    #[test]
    fn cp_tensor_validates_positivity() {
        let bad = CpTensor::new(
            vec![1.0],
            vec![],
            vec![Matrix::from_rows(&[&[1.0], &[0.0]])],
        );
        assert!(bad.is_err());
        let bad_weight = CpTensor::new(
            vec![0.0],
            vec![],
            vec![Matrix::from_rows(&[&[1.0]])],
        );
        assert!(bad_weight.is_err());
    }
}
