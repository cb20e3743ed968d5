//! Domain types shared by every analysis module.
//!
//! A logged rollout is an [`EpisodeRecord`]: one or more instruction
//! variants ([`VariantTrajectory`]), each a sequence of timesteps
//! ([`TimestepRecord`]) that carry one token distribution summary per action
//! dimension ([`DimensionStep`]). Variant 0 is the original instruction and
//! defines both the episode length and the outcome.

use crate::error::{Error, Result};

/// Tolerance for the softmax/top-probability consistency check.
pub const LOGIT_CONSISTENCY_TOL: f64 = 1e-9;

/// Number of completion levels (0..=99 percent) used by the temporal tools.
pub const COMPLETION_LEVELS: usize = 100;

/// One action dimension at one timestep: the probability of the selected
/// token, plus (optionally) the full logit vector and the selected index.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionStep {
    pub top_prob: f64,
    pub logits: Option<Vec<f64>>,
    pub chosen_token: Option<usize>,
}

impl DimensionStep {
    pub fn new(top_prob: f64) -> Result<Self> {
        let step = Self { top_prob, logits: None, chosen_token: None };
        step.validate()?;
        Ok(step)
    }

    pub fn with_logits(top_prob: f64, logits: Vec<f64>, chosen_token: usize) -> Result<Self> {
        let step = Self { top_prob, logits: Some(logits), chosen_token: Some(chosen_token) };
        step.validate()?;
        Ok(step)
    }

    /// Builds a step from logits alone; the top probability and chosen token
    /// are derived from the softmax.
    pub fn from_logits(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::invalid("logits", "empty logit vector"));
        }
        let chosen = argmax(&logits);
        let top = softmax_at(&logits, chosen, 1.0);
        Self::with_logits(top, logits, chosen)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.top_prob.is_finite() || !(0.0..=1.0).contains(&self.top_prob) {
            return Err(Error::invalid("top_prob", format!("{} not in [0, 1]", self.top_prob)));
        }
        if let Some(logits) = &self.logits {
            if logits.len() < 2 {
                return Err(Error::invalid("logits", "need at least 2 tokens"));
            }
            if logits.iter().any(|z| !z.is_finite()) {
                return Err(Error::invalid("logits", "non-finite logit"));
            }
            let chosen = self
                .chosen_token
                .ok_or_else(|| Error::invalid("chosen_token", "required when logits are present"))?;
            if chosen >= logits.len() {
                return Err(Error::invalid(
                    "chosen_token",
                    format!("{chosen} out of range for {} tokens", logits.len()),
                ));
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if logits[chosen] < max {
                return Err(Error::invalid("chosen_token", "not an argmax of logits"));
            }
            let p = softmax_at(logits, chosen, 1.0);
            if (p - self.top_prob).abs() > LOGIT_CONSISTENCY_TOL {
                return Err(Error::invalid(
                    "top_prob",
                    format!("{} disagrees with softmax(logits) = {p}", self.top_prob),
                ));
            }
        }
        Ok(())
    }

    /// Number of tokens in the vocabulary, when logits are present.
    pub fn vocab_size(&self) -> Option<usize> {
        self.logits.as_ref().map(Vec::len)
    }
}

/// Index of the first maximal element.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `softmax(logits / temperature)[index]`, computed stably.
pub fn softmax_at(logits: &[f64], index: usize, temperature: f64) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = logits.iter().map(|z| ((z - max) / temperature).exp()).sum();
    ((logits[index] - max) / temperature).exp() / denom
}

/// Full tempered softmax.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

/// Largest tempered softmax probability: `1 / sum_k exp((z_k - max z) / T)`.
pub fn max_softmax(logits: &[f64], temperature: f64) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = logits.iter().map(|z| ((z - max) / temperature).exp()).sum();
    1.0 / denom
}

/// One timestep of one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepRecord {
    /// 1-based timestep index.
    pub t: usize,
    pub dims: Vec<DimensionStep>,
    /// Robot is near or touching an object.
    pub proximity: bool,
}

impl TimestepRecord {
    pub fn num_dims(&self) -> usize {
        self.dims.len()
    }

    pub fn top_probs(&self) -> impl Iterator<Item = f64> + '_ {
        self.dims.iter().map(|d| d.top_prob)
    }
}

/// The rollout produced under one instruction wording.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantTrajectory {
    /// 0 is the original instruction; others are paraphrases.
    pub variant_id: u32,
    pub instruction_text: String,
    pub steps: Vec<TimestepRecord>,
}

impl VariantTrajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Step with 1-based index `t`.
    pub fn step(&self, t: usize) -> Option<&TimestepRecord> {
        t.checked_sub(1).and_then(|i| self.steps.get(i))
    }
}

/// One trial: every instruction variant's trajectory plus the binary outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode_id: String,
    pub task_id: String,
    pub outcome: bool,
    pub variants: Vec<VariantTrajectory>,
}

impl EpisodeRecord {
    /// Validates and builds an episode. Variants are reordered by id so that
    /// variant 0 comes first.
    pub fn new(
        episode_id: impl Into<String>,
        task_id: impl Into<String>,
        outcome: bool,
        mut variants: Vec<VariantTrajectory>,
    ) -> Result<Self> {
        variants.sort_by_key(|v| v.variant_id);
        let episode =
            Self { episode_id: episode_id.into(), task_id: task_id.into(), outcome, variants };
        episode.validate()?;
        Ok(episode)
    }

    /// Checks every structural invariant, reporting the offending field path.
    pub fn validate(&self) -> Result<()> {
        if self.variants.first().map(|v| v.variant_id) != Some(0) {
            return Err(Error::invalid("variants", "variant 0 must be present and first"));
        }
        let mut dims: Option<usize> = None;
        for (vi, variant) in self.variants.iter().enumerate() {
            if vi > 0 && variant.variant_id <= self.variants[vi - 1].variant_id {
                return Err(Error::invalid(
                    format!("variants[{vi}].variant_id"),
                    "variant ids must be unique and ascending",
                ));
            }
            if vi == 0 && variant.steps.is_empty() {
                return Err(Error::invalid("variants[0].steps", "variant 0 has no timesteps"));
            }
            for (si, step) in variant.steps.iter().enumerate() {
                let path = format!("variants[{vi}].steps[{si}]");
                if step.t != si + 1 {
                    return Err(Error::invalid(
                        format!("{path}.t"),
                        format!("expected t={}, found {}", si + 1, step.t),
                    ));
                }
                if step.dims.is_empty() {
                    return Err(Error::invalid(format!("{path}.dims"), "no action dimensions"));
                }
                match dims {
                    None => dims = Some(step.dims.len()),
                    Some(d) if d != step.dims.len() => {
                        return Err(Error::invalid(
                            format!("{path}.dims"),
                            format!("ragged dimensions: expected {d}, found {}", step.dims.len()),
                        ))
                    }
                    _ => {}
                }
                for (di, dim) in step.dims.iter().enumerate() {
                    dim.validate().map_err(|e| match e {
                        Error::Invalid { path: field, cause } => {
                            Error::invalid(format!("{path}.dims[{di}].{field}"), cause)
                        }
                        other => other,
                    })?;
                }
            }
        }
        Ok(())
    }

    /// The canonical (original-instruction) trajectory.
    pub fn canonical(&self) -> &VariantTrajectory {
        &self.variants[0]
    }

    /// Episode length `T`, defined by variant 0.
    pub fn len(&self) -> usize {
        self.canonical().len()
    }

    pub fn is_empty(&self) -> bool {
        self.canonical().is_empty()
    }

    /// Number of action dimensions `D`.
    pub fn num_dims(&self) -> usize {
        self.canonical().steps.first().map_or(0, TimestepRecord::num_dims)
    }

    pub fn num_variants(&self) -> usize {
        self.variants.len()
    }
}

/// Checks that every episode shares the same number of action dimensions and
/// returns that number.
pub fn shared_dims(episodes: &[EpisodeRecord]) -> Result<usize> {
    let first = episodes.first().ok_or(Error::EmptyInput)?.num_dims();
    for ep in episodes {
        if ep.num_dims() != first {
            return Err(Error::DimensionMismatch { expected: first, found: ep.num_dims() });
        }
    }
    Ok(first)
}

/// A trial-level (confidence, outcome) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceSample {
    pub confidence: f64,
    pub outcome: bool,
}

impl ConfidenceSample {
    pub fn new(confidence: f64, outcome: bool) -> Result<Self> {
        if !confidence.is_finite() || !(0.0..=1.0).contains(&confidence) {
            return Err(Error::OutOfRange { what: "confidence", value: confidence });
        }
        Ok(Self { confidence, outcome })
    }

    pub fn y(&self) -> f64 {
        if self.outcome {
            1.0
        } else {
            0.0
        }
    }
}

/// Convenience for building sample lists in tests and fixtures.
pub fn samples_from_pairs(pairs: &[(f64, u8)]) -> Vec<ConfidenceSample> {
    pairs.iter().map(|&(c, y)| ConfidenceSample { confidence: c, outcome: y != 0 }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub count: usize,
    pub mean_confidence: f64,
    pub mean_accuracy: f64,
}

/// Equal-mass bins over confidence-sorted samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedDiagram {
    pub bins: Vec<Bin>,
    pub total_n: usize,
}

/// Completion-indexed confidence thresholds for the halting monitor.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdProfile {
    pub quantile_level: f64,
    /// `thresholds[pct]` for pct in 0..100.
    pub thresholds: Vec<f64>,
}

impl ThresholdProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.quantile_level > 0.0 && self.quantile_level < 1.0) {
            return Err(Error::BadQuantile(self.quantile_level));
        }
        if self.thresholds.len() != COMPLETION_LEVELS {
            return Err(Error::MissingProfileLevels(self.thresholds.len()));
        }
        if let Some(bad) = self.thresholds.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange { what: "threshold", value: *bad });
        }
        Ok(())
    }

    pub fn threshold(&self, pct: usize) -> f64 {
        self.thresholds[pct]
    }
}
