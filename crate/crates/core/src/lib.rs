//! Small-area estimation of family-planning indicators from complex surveys.
//!
//! The crate implements a two-step pipeline:
//!
//! 1. **Direct estimation** ([`direct`]): design-based Hajek estimates of
//!    indicator proportions per (survey, area, year, indicator, subgroup)
//!    cell, with stratified cluster-level variance and a logit transform.
//! 2. **Smoothing** ([`inference`]): the logit-scale direct estimates are
//!    treated as noisy observations of a latent spatio-temporal field built
//!    from Gaussian Markov random field blocks ([`gmrf`]); hyperparameters
//!    are sampled by MCMC (or optimized, in empirical-Bayes mode) against the
//!    exact marginal likelihood, and the latent field is drawn exactly per
//!    hyperparameter sample.
//!
//! Model choice utilities ([`selection`]), report generation and
//! orchestration ([`pipeline`]), and a synthetic-data generator for
//! calibration studies ([`synthetic`]) sit on top.

pub mod direct;
pub mod error;
pub mod gmrf;
pub mod inference;
pub mod pipeline;
pub mod selection;
pub mod linalg;
pub mod survey;
pub mod synthetic;
pub mod util;

pub use error::{Error, Result};
