//! # mmd-landscape
//!
//! Population and finite-sample Maximum Mean Discrepancy (MMD) objectives for
//! three Gaussian-family estimation problems, together with the tooling needed
//! to study their optimization landscapes:
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`models`] | Parametric families, exact samplers, CSV export |
//! | [`kernel`] | Gaussian RBF kernel, Gram sums, Gaussian–RBF expectation |
//! | [`closed_form`] | Analytic MMD values, gradients, Hessians, stationary sets |
//! | [`estimators`] | Unbiased finite-sample MMD, one-sided MMD, negative log-likelihood |
//! | [`optimize`] | GD / Adam, finite differences, critical-point scanning |
//! | [`harness`] | Recovery trials, success-rate sweeps, linear unmixing |
//!
//! The kernel is `k(x, y) = exp(-‖x − y‖² / (2σ²))` throughout, where the
//! bandwidth σ² is carried by [`KernelConfig`].
//!
//! ```
//! use mmd_landscape::{closed_form, KernelConfig, LowRankCovModel};
//! use nalgebra::DVector;
//!
//! let truth = LowRankCovModel::new(DVector::from_vec(vec![1.0, 0.0]), 0.0).unwrap();
//! let cfg = KernelConfig::new(1.0).unwrap();
//! let at_truth = closed_form::mmd_cov(&truth, &truth.a, &cfg, false).unwrap();
//! assert!(at_truth.value.abs() < 1e-12);
//! ```

pub mod closed_form;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod kernel;
mod linalg;
pub mod models;
pub mod optimize;
pub mod rng;

pub use error::{Error, Result};
pub use kernel::KernelConfig;
pub use models::{LowRankCovModel, MeanModel, ParametricModel, Sample, SymGmmModel, UnmixingModel};
