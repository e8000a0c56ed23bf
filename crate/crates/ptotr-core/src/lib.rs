//! Poisson-response tensor-on-tensor regression.
//!
//! Count tensors `Y_(i)` are modeled entry-wise Poisson with rates given by
//! the partial contraction `<X_(i)|B>` of non-negative covariate tensors
//! against a strictly positive coefficient tensor `B` carrying a rank-R CP
//! decomposition. The crate provides:
//!
//! * [`tensor`] — dense/CP tensors, matricization, Khatri-Rao, contraction;
//! * [`mm`] — the multiplicative majorization-minimization kernel used as a
//!   full-rank Poisson solver, ML-EM step, and inner factor-update engine;
//! * [`estimator`] — alternating maximum-likelihood estimation of the CP
//!   coefficient with multi-start, BIC, and parameter counting;
//! * [`ar`], [`radon`], [`pet`], [`changepoint`] — the application
//!   pipelines (autoregressive forecasting covariates, parallel-beam
//!   tomography with ML-EM baseline, likelihood-ratio change-point scans);
//! * [`synth`] — seeded generators for the synthetic experiments;
//! * [`diagnostics`] — exact Poisson KL divergence, the minimax lower
//!   bound, and a finite-difference gradient checker;
//! * [`io`] — tensor/dataset file formats and run configuration.
//!
//! With the default `parallel` feature the data-parallel inner loops run on
//! rayon; disabling it yields a sequential build with bit-identical results.

pub mod ar;
pub mod changepoint;
pub mod diagnostics;
pub mod estimator;
pub mod io;
pub mod mm;
pub mod par;
pub mod pet;
pub mod radon;
pub mod synth;
pub mod tensor;

pub use estimator::{FitConfig, FitResult, ParamCountConvention, PtotrProblem};
pub use tensor::{CpTensor, DenseTensor, Matrix, MultiIndex};
