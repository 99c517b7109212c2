//! Predictive linear-Gaussian (PLG) models of scalar time series.
//!
//! A PLG keeps the mean and covariance of the next `n` observations as its
//! state. This crate provides exact filtering and prediction for PLGs, a
//! Kalman-filter reference for linear dynamical systems (LDS), the closed-form
//! LDS → PLG conversion, a moment-based estimator of PLG parameters from
//! trace data, and a generator of random stable test systems.

// `!(x > floor)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ce;
pub mod convert;
pub mod error;
pub mod gauss;
pub mod json;
pub mod lds;
pub mod linalg;
pub mod plg;
pub mod seeds;
pub mod sysgen;
pub mod trace;

pub use ce::{ce_learn, CeDiagnostics, CeOptions, TraceSet};
pub use convert::lds_to_plg;
pub use error::{Error, Result};
pub use gauss::GaussianDist;
pub use lds::{KalmanState, LdsParams};
pub use plg::{lds_param_count, plg_param_count, PlgParams, PlgState};
pub use sysgen::{random_lds, GenConfig, RMode};
pub use trace::Trace;
