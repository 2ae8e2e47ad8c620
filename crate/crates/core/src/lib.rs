//! Logit models for survey item nonresponse under block-structured covariate
//! missingness.
//!
//! Three estimators share one pipeline: complete-case analysis, fill-in by
//! multiple imputation, and block model averaging over the submodels of the
//! generalized missing-indicator grand model. A synthetic survey generator
//! and Monte Carlo driver make the estimators checkable against known truth.

pub mod averaging;
pub mod design;
pub mod error;
pub mod impute;
pub mod logit;
pub mod par;
pub mod patterns;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod simulate;
pub mod tabular;

pub use error::{Error, ErrorClass, Result};
