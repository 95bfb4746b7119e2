//! Semi-supervised outlier detection by boosting over transformed outlier
//! scores (TOS).
//!
//! The pipeline has three phases:
//!
//! 1. [`tos`]: unsupervised detectors from [`detectors`] are fitted on the
//!    training rows and their scores become new features.
//! 2. [`selection`]: a subset of those score columns is chosen at random, by
//!    accuracy, or by accuracy discounted by correlation with the columns
//!    already chosen, and concatenated with the original features.
//! 3. [`boost`]: a regularized gradient-boosted tree classifier is trained on
//!    the combined space.
//!
//! [`baselines`] holds the EasyEnsemble logistic-regression comparators and
//! [`eval`] the metrics, statistical tests and the repeated-trial experiment
//! runner.

pub mod baselines;
pub mod boost;
pub mod config;
pub mod data;
pub mod detectors;
pub mod error;
pub mod eval;
pub mod seed;
pub mod selection;
pub mod tos;

pub use error::{Error, Result};
