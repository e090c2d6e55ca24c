//! Hurst-distribution estimation for multivariate fractal time series from
//! wavelet random matrix log-eigenvalues, spectral clustering and ICSD
//! model selection.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cluster;
pub mod error;
pub mod gmm;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod par;
pub mod pipeline;
pub mod seed;
pub mod selection;
pub mod synth;
pub mod wavelet;
pub mod wrm;
