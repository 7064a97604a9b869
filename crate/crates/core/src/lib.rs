//! Kernel optimal weighting for marginal structural models with time-varying
//! treatments: panel ingestion, RKHS balance objectives, a nonnegative QP
//! solver, marginal-likelihood tuning, baseline inverse-probability weights,
//! weighted MSM fits and a simulation harness.

pub mod balance;
pub mod error;
pub mod exec;
pub mod kernels;
pub mod logistic;
pub mod msm;
pub mod optimal;
pub mod panel;
pub mod qp;
pub mod sim;
pub mod tuner;
pub mod weights;

pub use error::{ErrorClass, KowError, Result, Stage};
pub use exec::Execution;
