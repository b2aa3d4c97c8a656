//! Estimation of soybean relative-maturity day from time series of per-plot
//! UAV images.
//!
//! The crate covers the full pipeline:
//!
//! - [`synthetic`] — a field generator with an analytically controlled
//!   greenness trajectory, so every downstream prediction has an exact oracle;
//! - [`ingest`] — plot boundary parsing, crop rectification, resizing and
//!   date-ordered series assembly;
//! - [`augment`] — brightness / contrast / Gaussian-blur perturbations for
//!   robustness experiments;
//! - [`baseline`] — the GLI + robust LOESS threshold predictor and its
//!   threshold grid search;
//! - [`neural`] — a from-scratch CNN-LSTM regressor with hand-derived
//!   gradients, Huber loss, Xavier init and Adam;
//! - [`train`] / [`metrics`] / [`report`] — splitting, the training loop,
//!   MAE/MSE/r² evaluation and CSV/SVG emission.

pub mod augment;
pub mod baseline;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod neural;
pub mod raster;
pub mod report;
pub mod rng;
pub mod synthetic;
pub mod train;

pub use error::CoreError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
