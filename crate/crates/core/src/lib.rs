//! Probability calibration by isotonic regression and by recursive,
//! ROC-preserving partitioning of the probability simplex.
//!
//! The binary calibrator is weighted pool-adjacent-violators ([`pav`]). The
//! multi-class calibrator ([`partition`]) recursively splits the simplex
//! around affine thresholds and keeps only splits whose calibrated
//! forecasts stay ROC monotone with respect to the raw ones. [`roc`] and
//! [`metrics`] provide the evaluation side: ROC curves and surfaces, convex
//! hulls, AUC/VUS, ECE and cross entropy.

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod pav;
pub mod roc;
pub mod simplex;
pub mod sweep;

pub use dataset::{read_forecasts_csv, synth_simplex, write_forecasts_csv, Dataset, LabeledForecast};
pub use model::{fit, Calibrator, FitConfig, FittedModel, Method, ModelFile};
pub use error::{Error, Result};
pub use simplex::{assign_region, partition_samples, AffineThreshold};
