//! Post hoc recalibration.
//!
//! Four transforms share one [`Recalibrator`] type:
//!
//! - global Platt scaling, `g(c) = sigmoid(alpha * c + beta)` on the trial
//!   confidence;
//! - global temperature scaling, one temperature applied to every action
//!   dimension's logits before the softmax;
//! - action-wise Platt scaling, `mean_d sigmoid(alpha_d * c_d + beta_d)` over
//!   per-dimension confidences;
//! - action-wise temperature scaling, one temperature per dimension.
//!
//! All of them only touch reported confidences. Temperatures are positive, so
//! the argmax token of every dimension, and with it the executed action, is
//! unchanged.

mod platt;
pub mod protocol;
mod record;
mod temperature;

pub use platt::{fit_actionwise_platt, fit_platt, platt_nll};
pub use record::RECORD_HEADER;
pub use temperature::{fit_actionwise_temperature, fit_temperature, tempered_confidence, temperature_nll};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::DEFAULT_NLL_EPSILON;
use crate::types::{max_softmax, shared_dims, ConfidenceSample, EpisodeRecord};

/// Optimizer settings shared by every fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Absolute clamp on Platt parameters and on `ln T`.
    pub param_bound: f64,
    /// NLL clamp.
    pub epsilon: f64,
    /// Replace hard 0/1 targets by `1/(N- + 2)` and `(N+ + 1)/(N+ + 2)`.
    pub target_smoothing: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            param_bound: 50.0,
            epsilon: DEFAULT_NLL_EPSILON,
            target_smoothing: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations", "must be positive"));
        }
        if !(self.gradient_tolerance > 0.0 && self.gradient_tolerance < 1.0) {
            return Err(Error::invalid("gradient_tolerance", "must be in (0, 1)"));
        }
        if !(self.param_bound > 0.0) {
            return Err(Error::invalid("param_bound", "must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::invalid("epsilon", "must be in (0, 0.5)"));
        }
        Ok(())
    }
}

/// Per-dimension confidences (and optionally logits) at one evaluation
/// timestep, one row per trial.
#[derive(Debug, Clone, PartialEq)]
pub struct DimSamples {
    pub per_dim_confidence: Vec<Vec<f64>>,
    pub outcomes: Vec<bool>,
    /// `logits[trial][dim]` is that dimension's full logit vector.
    pub logits: Option<Vec<Vec<Vec<f64>>>>,
}

impl DimSamples {
    pub fn new(per_dim_confidence: Vec<Vec<f64>>, outcomes: Vec<bool>) -> Result<Self> {
        let data = Self { per_dim_confidence, outcomes, logits: None };
        data.validate()?;
        Ok(data)
    }

    pub fn with_logits(
        per_dim_confidence: Vec<Vec<f64>>,
        outcomes: Vec<bool>,
        logits: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let data = Self { per_dim_confidence, outcomes, logits: Some(logits) };
        data.validate()?;
        Ok(data)
    }

    /// Pre-action (t = 1, original instruction) per-dimension data. Logits
    /// are kept only when every trial carries them for every dimension.
    pub fn pre_action(episodes: &[EpisodeRecord]) -> Result<Self> {
        shared_dims(episodes)?;
        let mut rows = Vec::with_capacity(episodes.len());
        let mut outcomes = Vec::with_capacity(episodes.len());
        let mut logits = Some(Vec::with_capacity(episodes.len()));
        for ep in episodes {
            let step = ep.canonical().step(1).ok_or(Error::EmptyEpisode)?;
            rows.push(step.top_probs().collect());
            outcomes.push(ep.outcome);
            if let Some(all) = logits.as_mut() {
                match step.dims.iter().map(|d| d.logits.clone()).collect::<Option<Vec<_>>>() {
                    Some(row) => all.push(row),
                    None => logits = None,
                }
            }
        }
        let data = Self { per_dim_confidence: rows, outcomes, logits };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_dim_confidence.len() != self.outcomes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} confidence rows but {} outcomes",
                self.per_dim_confidence.len(),
                self.outcomes.len()
            )));
        }
        let d = self.dims();
        for (i, row) in self.per_dim_confidence.iter().enumerate() {
            if row.len() != d || d == 0 {
                return Err(Error::ShapeMismatch(format!("row {i} has {} dimensions, expected {d}", row.len())));
            }
            if let Some(bad) = row.iter().find(|c| !(0.0..=1.0).contains(*c)) {
                return Err(Error::OutOfRange { what: "dimension confidence", value: *bad });
            }
        }
        if let Some(logits) = &self.logits {
            if logits.len() != self.outcomes.len() {
                return Err(Error::ShapeMismatch("logit rows do not match outcomes".into()));
            }
            for (i, row) in logits.iter().enumerate() {
                if row.len() != d {
                    return Err(Error::ShapeMismatch(format!("logit row {i} has {} dimensions", row.len())));
                }
                if row.iter().any(|z| z.len() < 2 || z.iter().any(|v| !v.is_finite())) {
                    return Err(Error::ShapeMismatch(format!("logit row {i} has an invalid vector")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.per_dim_confidence.first().map_or(0, Vec::len)
    }

    /// Trial confidences as the mean over dimensions.
    pub fn baseline(&self) -> Vec<ConfidenceSample> {
        self.per_dim_confidence
            .iter()
            .zip(&self.outcomes)
            .map(|(row, &outcome)| ConfidenceSample {
                confidence: row.iter().sum::<f64>() / row.len() as f64,
                outcome,
            })
            .collect()
    }

    /// Confidences of one dimension, paired with outcomes.
    pub fn column(&self, dim: usize) -> Vec<ConfidenceSample> {
        self.per_dim_confidence
            .iter()
            .zip(&self.outcomes)
            .map(|(row, &outcome)| ConfidenceSample { confidence: row[dim], outcome })
            .collect()
    }

    /// Rows at the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            per_dim_confidence: indices.iter().map(|&i| self.per_dim_confidence[i].clone()).collect(),
            outcomes: indices.iter().map(|&i| self.outcomes[i]).collect(),
            logits: self.logits.as_ref().map(|l| indices.iter().map(|&i| l[i].clone()).collect()),
        }
    }

    pub(crate) fn require_logits(&self) -> Result<&Vec<Vec<Vec<f64>>>> {
        self.logits.as_ref().ok_or(Error::MissingLogits { trial: 0, dim: 0 })
    }
}

/// Which action-wise Platt objective to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// NLL of the averaged per-dimension sigmoids.
    #[default]
    Joint,
    /// Each dimension's sigmoid fitted alone against the outcomes.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecalKind {
    Platt,
    Temperature,
    ActionwisePlatt,
    ActionwiseTemperature,
}

impl RecalKind {
    pub fn name(self) -> &'static str {
        match self {
            RecalKind::Platt => "platt",
            RecalKind::Temperature => "temperature",
            RecalKind::ActionwisePlatt => "actionwise_platt",
            RecalKind::ActionwiseTemperature => "actionwise_temperature",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattParams {
    pub alpha: f64,
    pub beta: f64,
}

impl PlattParams {
    pub const IDENTITY_INIT: PlattParams = PlattParams { alpha: 1.0, beta: 0.0 };

    pub fn apply(&self, c: f64) -> f64 {
        sigmoid(self.alpha * c + self.beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecalParams {
    Platt(PlattParams),
    Temperature(f64),
    ActionwisePlatt(Vec<PlattParams>),
    ActionwiseTemperature(Vec<f64>),
}

/// Fit bookkeeping carried alongside the parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitMeta {
    pub n: usize,
    pub seed: Option<u64>,
    pub converged: bool,
    pub iterations: usize,
    pub mode: Option<FitMode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recalibrator {
    pub params: RecalParams,
    pub meta: FitMeta,
}

impl Recalibrator {
    pub fn new(params: RecalParams, meta: FitMeta) -> Result<Self> {
        let r = Self { params, meta };
        r.validate()?;
        Ok(r)
    }

    pub fn kind(&self) -> RecalKind {
        match self.params {
            RecalParams::Platt(_) => RecalKind::Platt,
            RecalParams::Temperature(_) => RecalKind::Temperature,
            RecalParams::ActionwisePlatt(_) => RecalKind::ActionwisePlatt,
            RecalParams::ActionwiseTemperature(_) => RecalKind::ActionwiseTemperature,
        }
    }

    /// `D` for action-wise kinds, `None` for global ones.
    pub fn dims(&self) -> Option<usize> {
        match &self.params {
            RecalParams::ActionwisePlatt(p) => Some(p.len()),
            RecalParams::ActionwiseTemperature(t) => Some(t.len()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64| v.is_finite();
        match &self.params {
            RecalParams::Platt(p) if !(finite(p.alpha) && finite(p.beta)) => Err(Error::NonFinite("platt parameters")),
            RecalParams::Temperature(t) if !(t.is_finite() && *t > 0.0) => {
                Err(Error::OutOfRange { what: "temperature", value: *t })
            }
            RecalParams::ActionwisePlatt(ps) if ps.is_empty() => Err(Error::EmptyDims),
            RecalParams::ActionwisePlatt(ps) if ps.iter().any(|p| !(finite(p.alpha) && finite(p.beta))) => {
                Err(Error::NonFinite("action-wise platt parameters"))
            }
            RecalParams::ActionwiseTemperature(ts) if ts.is_empty() => Err(Error::EmptyDims),
            RecalParams::ActionwiseTemperature(ts) => match ts.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
                Some(bad) => Err(Error::OutOfRange { what: "temperature", value: *bad }),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    fn mismatch(&self, expected: RecalKind) -> Error {
        Error::KindMismatch { expected: expected.name(), found: self.kind().name() }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Global Platt transform of one confidence.
pub fn apply_platt(r: &Recalibrator, c: f64) -> Result<f64> {
    match &r.params {
        RecalParams::Platt(p) => {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::OutOfRange { what: "confidence", value: c });
            }
            Ok(p.apply(c))
        }
        _ => Err(r.mismatch(RecalKind::Platt)),
    }
}

/// Mean of per-dimension sigmoids.
pub fn apply_actionwise_platt(r: &Recalibrator, dims: &[f64]) -> Result<f64> {
    match &r.params {
        RecalParams::ActionwisePlatt(ps) => {
            if dims.len() != ps.len() {
                return Err(Error::DimensionMismatch { expected: ps.len(), found: dims.len() });
            }
            if let Some(bad) = dims.iter().find(|c| !(0.0..=1.0).contains(*c)) {
                return Err(Error::OutOfRange { what: "dimension confidence", value: *bad });
            }
            Ok(ps.iter().zip(dims).map(|(p, &c)| p.apply(c)).sum::<f64>() / dims.len() as f64)
        }
        _ => Err(r.mismatch(RecalKind::ActionwisePlatt)),
    }
}

/// Trial confidence recomputed from per-dimension logits under a global or
/// per-dimension temperature.
pub fn apply_temperature(r: &Recalibrator, logits: &[Vec<f64>]) -> Result<f64> {
    let d = logits.len();
    if d == 0 {
        return Err(Error::EmptyDims);
    }
    let sum: f64 = match &r.params {
        RecalParams::Temperature(t) => logits.iter().map(|z| max_softmax(z, *t)).sum(),
        RecalParams::ActionwiseTemperature(ts) => {
            if ts.len() != d {
                return Err(Error::DimensionMismatch { expected: ts.len(), found: d });
            }
            logits.iter().zip(ts).map(|(z, t)| max_softmax(z, *t)).sum()
        }
        _ => return Err(r.mismatch(RecalKind::Temperature)),
    };
    Ok(sum / d as f64)
}

/// Input to [`recalibrate_samples`].
#[derive(Debug, Clone, Copy)]
pub enum RecalInput<'a> {
    /// Trial-level confidences; only global Platt accepts these.
    Scalars(&'a [ConfidenceSample]),
    /// Per-dimension confidences (and logits for temperature kinds). Global
    /// Platt is applied to the per-trial mean.
    Dims(&'a DimSamples),
}

/// Applies a fitted transform to every trial; outcomes pass through.
pub fn recalibrate_samples(r: &Recalibrator, input: RecalInput<'_>) -> Result<Vec<ConfidenceSample>> {
    match (input, &r.params) {
        (RecalInput::Scalars(samples), RecalParams::Platt(_)) => samples
            .iter()
            .map(|s| Ok(ConfidenceSample { confidence: apply_platt(r, s.confidence)?, outcome: s.outcome }))
            .collect(),
        (RecalInput::Scalars(_), _) => Err(Error::KindMismatch {
            expected: "per-dimension input",
            found: "scalar confidences",
        }),
        (RecalInput::Dims(data), RecalParams::Platt(_)) => data
            .baseline()
            .iter()
            .map(|s| Ok(ConfidenceSample { confidence: apply_platt(r, s.confidence)?, outcome: s.outcome }))
            .collect(),
        (RecalInput::Dims(data), RecalParams::ActionwisePlatt(ps)) => {
            if !data.is_empty() && data.dims() != ps.len() {
                return Err(Error::ShapeMismatch(format!(
                    "recalibrator has {} dimensions, data has {}",
                    ps.len(),
                    data.dims()
                )));
            }
            data.per_dim_confidence
                .iter()
                .zip(&data.outcomes)
                .map(|(row, &outcome)| Ok(ConfidenceSample { confidence: apply_actionwise_platt(r, row)?, outcome }))
                .collect()
        }
        (RecalInput::Dims(data), RecalParams::Temperature(_) | RecalParams::ActionwiseTemperature(_)) => {
            if data.is_empty() {
                return Ok(Vec::new());
            }
            let logits = data.require_logits()?;
            if let Some(d) = r.dims().filter(|d| *d != data.dims()) {
                return Err(Error::ShapeMismatch(format!(
                    "recalibrator has {d} dimensions, data has {}",
                    data.dims()
                )));
            }
            logits
                .iter()
                .zip(&data.outcomes)
                .map(|(row, &outcome)| Ok(ConfidenceSample { confidence: apply_temperature(r, row)?, outcome }))
                .collect()
        }
    }
}

/// Targets used by the NLL objectives: hard labels, or Platt's smoothed
/// targets when enabled.
pub(crate) fn fit_targets(outcomes: &[bool], cfg: &FitConfig) -> Result<Vec<f64>> {
    let positives = outcomes.iter().filter(|y| **y).count();
    let negatives = outcomes.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Degenerate("fitting needs at least one success and one failure"));
    }
    let (hi, lo) = if cfg.target_smoothing {
        ((positives as f64 + 1.0) / (positives as f64 + 2.0), 1.0 / (negatives as f64 + 2.0))
    } else {
        (1.0, 0.0)
    };
    Ok(outcomes.iter().map(|&y| if y { hi } else { lo }).collect())
}
