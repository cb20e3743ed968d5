//! Confidence calibration toolkit for token-based sequential policies.
//!
//! A policy that emits one token distribution per action dimension can be
//! scored for calibration from its logged rollouts. This crate covers the
//! whole loop:
//!
//! - [`metrics`]: binned ECE, Brier score and NLL over trial-level samples.
//! - [`confidence`]: baseline per-dimension confidence, prompt ensembles and
//!   trial-level aggregation.
//! - [`recalibrate`]: global and action-wise Platt and temperature scaling.
//! - [`temporal`]: calibration as a function of task completion.
//! - [`monitor`]: quantile-threshold halting with a proximity gate.
//! - [`audit`]: per-dimension calibration and success-vs-calibration tables.
//! - [`synth`]: a synthetic policy with known ground truth.
//! - [`io`]: the line-delimited episode log and report formats.
//!
//! Monte Carlo protocols run on rayon when the `parallel` feature is on (the
//! default) and sequentially otherwise, with identical results.

pub mod audit;
pub mod confidence;
pub mod error;
pub mod io;
pub mod metrics;
pub mod monitor;
pub mod optimize;
pub mod par;
pub mod recalibrate;
pub mod synth;
pub mod temporal;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    Bin, BinnedDiagram, ConfidenceSample, DimensionStep, EpisodeRecord, ThresholdProfile,
    TimestepRecord, VariantTrajectory,
};
