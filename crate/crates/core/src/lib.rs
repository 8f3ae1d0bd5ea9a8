//! Partial channel dependence for multivariate time-series forecasting.
//!
//! A channel-token transformer whose channel-attention logits are scaled
//! element-wise by a learnable channel mask `M = σ(α·R̄ + β)`, where `R̄` is
//! the mean-centered absolute correlation matrix of the training data and
//! `(α, β)` are per-dataset domain parameters. The mask interpolates between
//! channel independence (identity) and full channel dependence (all ones).
//!
//! Modules:
//! - [`autodiff`]: tape-based reverse-mode differentiation and gradient checks
//! - [`chanstats`]: similarity matrices and the CD ratio
//! - [`chanmask`]: mask construction, domain-parameter registry
//! - [`forecaster`]: the channel-token transformer
//! - [`dataio`]: loading, splitting, windowing, synthetic data, missing values
//! - [`harness`]: training, evaluation, analysis experiments

pub mod autodiff;
pub mod chanmask;
pub mod chanstats;
pub mod dataio;
pub mod error;
pub mod forecaster;
pub mod harness;
pub mod matrix;

pub use error::{Error, Result};
pub use matrix::Matrix;
