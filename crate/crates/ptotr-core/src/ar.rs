//! Autoregressive covariate construction for count-tensor forecasting.
//!
//! Two constructions are supported:
//!
//! * **Trend-augmented**: covariates of extent `M_q + F + 1` per mode hold
//!   `Y_{t-1}` in the leading block and the trend powers `t^0..t^F` on the
//!   diagonal corner positions, zeros elsewhere.
//! * **Slab-stacked**: covariates of shape `(M_1..M_P, S)` whose slabs are
//!   an optional all-ones intercept, single lags `Y_{t-f}`, and averaged
//!   lag blocks `(1/|block|) sum_{f in block} Y_{t-f}`.

use crate::tensor::{CpTensor, DenseTensor, TensorError};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArError {
    #[error("history has {got} steps but lags require at least {need}")]
    HistoryTooShort { need: usize, got: usize },
    #[error("invalid spec: {0}")]
    BadSpec(String),
    #[error("rate {rate} at step {t} exceeds the cap {cap}; series is explosive")]
    RateExplosion { t: usize, rate: f64, cap: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// How to assemble `X_t` from the response history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArCovariateSpec {
    /// Lag-1 block plus polynomial trend of the given degree.
    Trend { degree: usize },
    /// Stacked slabs: optional intercept plus one averaged slab per lag
    /// block. Blocks must be non-empty with positive lags; they need not be
    /// disjoint.
    Slabs { intercept_slab: bool, lag_blocks: Vec<Vec<usize>> },
}

impl ArCovariateSpec {
    pub fn validate(&self) -> Result<(), ArError> {
        if let ArCovariateSpec::Slabs { intercept_slab, lag_blocks } = self {
            if lag_blocks.iter().any(Vec::is_empty) {
                return Err(ArError::BadSpec("lag blocks must be non-empty".into()));
            }
            if lag_blocks.iter().flatten().any(|&f| f == 0) {
                return Err(ArError::BadSpec("lags must be positive".into()));
            }
            if !intercept_slab && lag_blocks.is_empty() {
                return Err(ArError::BadSpec("need an intercept slab or a lag block".into()));
            }
        }
        Ok(())
    }

    /// Largest lag consumed per step (1 for the trend construction).
    pub fn max_lag(&self) -> usize {
        match self {
            ArCovariateSpec::Trend { .. } => 1,
            ArCovariateSpec::Slabs { lag_blocks, .. } => {
                lag_blocks.iter().flatten().copied().max().unwrap_or(0)
            }
        }
    }

    /// Covariate extents for responses of shape `response_dims`.
    pub fn covariate_dims(&self, response_dims: &[usize]) -> Vec<usize> {
        match self {
            ArCovariateSpec::Trend { degree } => {
                response_dims.iter().map(|&m| m + degree + 1).collect()
            }
            ArCovariateSpec::Slabs { intercept_slab, lag_blocks } => {
                let slabs = usize::from(*intercept_slab) + lag_blocks.len();
                let mut d = response_dims.to_vec();
                d.push(slabs);
                d
            }
        }
    }
}

fn build_covariate(
    spec: &ArCovariateSpec,
    history: &[DenseTensor],
    t: usize, // 1-based absolute time of the response this covariate predicts
    response_dims: &[usize],
) -> Result<DenseTensor, ArError> {
    let dims = spec.covariate_dims(response_dims);
    let mut x = DenseTensor::zeros(&dims)?;
    match spec {
        ArCovariateSpec::Trend { degree } => {
            let prev = &history[t - 2]; // Y_{t-1}
            // Leading block: strides of the embedded tensor differ from the
            // source, so walk multi-indices.
            let mut idx = vec![0usize; response_dims.len()];
            for src in 0..prev.len() {
                let mut off = 0;
                let mut stride = 1;
                for (k, &d) in dims.iter().enumerate() {
                    off += idx[k] * stride;
                    stride *= d;
                }
                x.values_mut()[off] = prev.values()[src];
                for (k, &m) in response_dims.iter().enumerate() {
                    idx[k] += 1;
                    if idx[k] < m {
                        break;
                    }
                    idx[k] = 0;
                }
            }
            // Diagonal corners: entry at n_q = M_q + f + 1 (1-based) in every
            // mode carries t^f.
            for f in 0..=*degree {
                let mut off = 0;
                let mut stride = 1;
                for (k, &d) in dims.iter().enumerate() {
                    off += (response_dims[k] + f) * stride;
                    stride *= d;
                }
                x.values_mut()[off] = (t as f64).powi(f as i32);
            }
        }
        ArCovariateSpec::Slabs { intercept_slab, lag_blocks } => {
            let slab_len: usize = response_dims.iter().product();
            let mut slab = 0usize;
            if *intercept_slab {
                x.values_mut()[..slab_len].fill(1.0);
                slab += 1;
            }
            for block in lag_blocks {
                let dst = &mut x.values_mut()[slab * slab_len..(slab + 1) * slab_len];
                let scale = 1.0 / block.len() as f64;
                for &f in block {
                    let src = &history[t - 1 - f]; // Y_{t-f}
                    for (d, &s) in dst.iter_mut().zip(src.values()) {
                        *d += scale * s;
                    }
                }
                slab += 1;
            }
        }
    }
    Ok(x)
}

/// Turn a response history `Y_1..Y_T` into regression pairs `(X_t, Y_t)` for
/// `t = max_lag + 1 ..= T`.
pub fn build_ar_covariates(
    history: &[DenseTensor],
    spec: &ArCovariateSpec,
) -> Result<Vec<(DenseTensor, DenseTensor)>, ArError> {
    spec.validate()?;
    let max_lag = spec.max_lag();
    if history.len() <= max_lag {
        return Err(ArError::HistoryTooShort { need: max_lag + 1, got: history.len() });
    }
    let response_dims = history[0].dims().to_vec();
    if history.iter().any(|y| y.dims() != response_dims) {
        return Err(ArError::BadSpec("history tensors must share dimensions".into()));
    }
    let mut pairs = Vec::with_capacity(history.len() - max_lag);
    for t in (max_lag + 1)..=history.len() {
        let x = build_covariate(spec, history, t, &response_dims)?;
        pairs.push((x, history[t - 1].clone()));
    }
    Ok(pairs)
}

/// Sequential AR simulation used by the synth module: the pre-history is
/// zeros, `burn_in` initial steps are discarded, and absolute time keeps
/// running through the burn-in (relevant only to the trend construction).
pub(crate) fn simulate_series(
    b_true: &CpTensor,
    spec: &ArCovariateSpec,
    t_len: usize,
    burn_in: usize,
    rate_cap: f64,
    rng: &mut impl Rng,
) -> Result<Vec<DenseTensor>, crate::synth::SynthError> {
    spec.validate().map_err(|e| crate::synth::SynthError::BadParameter(e.to_string()))?;
    let response_dims = b_true.response_dims();
    let want = spec.covariate_dims(&response_dims);
    if b_true.covariate_dims() != want {
        return Err(crate::synth::SynthError::BadParameter(format!(
            "coefficient covariate dims {:?} do not match spec dims {:?}",
            b_true.covariate_dims(),
            want
        )));
    }
    let max_lag = spec.max_lag();
    let total = max_lag + burn_in + t_len;
    let mut history: Vec<DenseTensor> = Vec::with_capacity(total);
    for _ in 0..max_lag {
        history.push(DenseTensor::zeros(&response_dims).map_err(crate::synth::SynthError::from)?);
    }
    for t in (max_lag + 1)..=total {
        let x = build_covariate(spec, &history, t, &response_dims)
            .map_err(|e| crate::synth::SynthError::BadParameter(e.to_string()))?;
        let rates = b_true.contract(&x).map_err(crate::synth::SynthError::from)?;
        for (j, &r) in rates.values().iter().enumerate() {
            if r > rate_cap {
                return Err(crate::synth::SynthError::BadParameter(
                    ArError::RateExplosion { t: j + 1, rate: r, cap: rate_cap }.to_string(),
                ));
            }
        }
        let mut values = Vec::with_capacity(rates.len());
        for &r in rates.values() {
            values.push(crate::synth::poisson(r, rng)? as f64);
        }
        history.push(
            DenseTensor::new(response_dims.clone(), values).map_err(crate::synth::SynthError::from)?,
        );
    }
    Ok(history.split_off(max_lag + burn_in))
}
