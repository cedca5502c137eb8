//! Semi-parametric angular-radial (SPAR) modelling of multivariate extremes.
//!
//! The library decomposes a `d`-dimensional random vector into a radius
//! `R = ‖X‖` and an angle `W = X/‖X‖`, models the conditional radial tail
//! `R | W = w` with an angle-dependent generalized Pareto distribution whose
//! threshold `u(w)` and parameters `(σ(w), ξ(w))` are small feed-forward
//! networks, and resamples observed tail angles for the angular density.
//! A fitted [`SparModel`] simulates joint-tail events and estimates marginal
//! and compound tail probabilities, return levels, and dependence
//! diagnostics, with non-parametric bootstrap uncertainty.
//!
//! Pipeline outline:
//!
//! 1. [`dataio`] — ingest discharge-style series, derive weekly block maxima,
//!    or generate synthetic data with known tail behaviour.
//! 2. [`preprocess`] — map positive margins onto ℝ, centre at the geometric
//!    median, switch to polar coordinates.
//! 3. [`spar`] — two-stage fit: quantile-regression threshold network, then
//!    GPD regression with hard parameter sharing.
//! 4. [`inference`] — simulate from the joint tail and estimate probabilities
//!    over general regions via the law of total probability.
//! 5. [`diagnostics`] / [`bootstrap`] — goodness-of-fit data and percentile
//!    confidence intervals from full refits.

pub mod bootstrap;
pub mod dataio;
pub mod diagnostics;
pub mod error;
pub mod gpd;
pub mod inference;
pub mod matrix;
pub mod neural;
pub mod preprocess;
pub mod seeds;
pub mod spar;
mod stats;

pub use error::{Result, SparError};
pub use matrix::Matrix;
pub use spar::{Reparam, SparConfig, SparModel};
