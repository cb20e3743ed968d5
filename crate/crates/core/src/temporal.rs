//! Calibration over the task horizon.
//!
//! Progress is indexed by completion percent: level `pct` of an episode with
//! `T` steps maps to timestep `floor(pct * T / 100) + 1` (clamped to `T`), so
//! level 0 is always the pre-action step. At each level, confidence can be
//! the current step's baseline, a trailing window mean, or the mean of all
//! steps so far.

use serde::{Deserialize, Serialize};

use crate::confidence::baseline_confidence;
use crate::error::{Error, Result};
use crate::metrics::{brier, ece, equal_mass_bins};
use crate::par;
use crate::types::{shared_dims, BinnedDiagram, ConfidenceSample, EpisodeRecord, COMPLETION_LEVELS};

/// Default window length for [`TemporalAggregation::Window`].
pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalAggregation {
    #[default]
    Current,
    /// Mean over the current step and up to `w - 1` preceding ones.
    Window(usize),
    AvgAll,
}

impl TemporalAggregation {
    pub fn validate(self) -> Result<()> {
        match self {
            TemporalAggregation::Window(0) => Err(Error::invalid("window", "window length must be at least 1")),
            _ => Ok(()),
        }
    }
}

/// Timestep (1-based) at completion level `pct`.
pub fn timestep_at_completion(episode: &EpisodeRecord, pct: usize) -> Result<usize> {
    step_for_level(episode.len(), pct)
}

pub(crate) fn step_for_level(len: usize, pct: usize) -> Result<usize> {
    if len == 0 {
        return Err(Error::EmptyEpisode);
    }
    if pct >= COMPLETION_LEVELS {
        return Err(Error::OutOfRange { what: "completion percent", value: pct as f64 });
    }
    Ok((pct * len / 100 + 1).clamp(1, len))
}

/// Completion level of timestep `t` in an episode of `len` steps:
/// `floor(100 * (t - 1) / len)`. Inverse of [`timestep_at_completion`] in the
/// sense that the level maps back to a step no later than `t`.
pub fn completion_of_step(len: usize, t: usize) -> usize {
    (100 * (t - 1) / len).min(COMPLETION_LEVELS - 1)
}

/// Baseline confidence of every variant-0 step, in order.
pub fn baseline_trace(episode: &EpisodeRecord) -> Result<Vec<f64>> {
    episode.canonical().steps.iter().map(baseline_confidence).collect()
}

/// Aggregate over a precomputed baseline trace at 1-based step `t`.
pub fn aggregate_trace(trace: &[f64], t: usize, agg: TemporalAggregation) -> Result<f64> {
    agg.validate()?;
    if t == 0 || t > trace.len() {
        return Err(Error::OutOfRange { what: "timestep", value: t as f64 });
    }
    let window = match agg {
        TemporalAggregation::Current => &trace[t - 1..t],
        TemporalAggregation::Window(w) => &trace[t.saturating_sub(w)..t],
        TemporalAggregation::AvgAll => &trace[..t],
    };
    Ok(window.iter().sum::<f64>() / window.len() as f64)
}

/// Running aggregate at every step of a trace.
pub fn aggregate_all(trace: &[f64], agg: TemporalAggregation) -> Result<Vec<f64>> {
    (1..=trace.len()).map(|t| aggregate_trace(trace, t, agg)).collect()
}

/// Baseline confidence at step `t` aggregated with the preceding steps.
pub fn aggregated_confidence(episode: &EpisodeRecord, t: usize, agg: TemporalAggregation) -> Result<f64> {
    aggregate_trace(&baseline_trace(episode)?, t, agg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub completion_pct: usize,
    pub ece1: f64,
    pub brier: f64,
    pub n: usize,
    /// `None` when no episode at this level succeeded.
    pub mean_conf_success: Option<f64>,
    pub mean_conf_failure: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionCurve {
    pub points: Vec<CurvePoint>,
}

/// One sample per episode at each completion level; `levels[pct][i]` belongs
/// to episode `i`.
pub fn samples_by_level(
    episodes: &[EpisodeRecord],
    agg: TemporalAggregation,
) -> Result<Vec<Vec<ConfidenceSample>>> {
    agg.validate()?;
    shared_dims(episodes)?;
    let per_episode: Vec<Vec<f64>> = par::try_map_slice(episodes, |ep| {
        let running = aggregate_all(&baseline_trace(ep)?, agg)?;
        (0..COMPLETION_LEVELS)
            .map(|pct| Ok(running[step_for_level(running.len(), pct)? - 1]))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok((0..COMPLETION_LEVELS)
        .map(|pct| {
            episodes
                .iter()
                .zip(&per_episode)
                .map(|(ep, confs)| ConfidenceSample { confidence: confs[pct], outcome: ep.outcome })
                .collect()
        })
        .collect())
}

fn check_enough(episodes: &[EpisodeRecord], m_bins: usize) -> Result<()> {
    if episodes.len() < m_bins.max(1) {
        return Err(Error::TooFewEpisodes { needed: m_bins.max(1), got: episodes.len() });
    }
    Ok(())
}

fn mean_where(samples: &[ConfidenceSample], outcome: bool) -> Option<f64> {
    let (sum, count) = samples
        .iter()
        .filter(|s| s.outcome == outcome)
        .fold((0.0, 0usize), |(s, c), x| (s + x.confidence, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// ECE1, Brier and the success/failure confidence traces at every
/// completion level.
pub fn completion_curve(
    episodes: &[EpisodeRecord],
    agg: TemporalAggregation,
    m_bins: usize,
) -> Result<CompletionCurve> {
    check_enough(episodes, m_bins)?;
    let levels = samples_by_level(episodes, agg)?;
    let points = par::try_map_range(COMPLETION_LEVELS, |pct| {
        let samples = &levels[pct];
        Ok(CurvePoint {
            completion_pct: pct,
            ece1: ece(samples, 1, m_bins)?,
            brier: brier(samples)?,
            n: samples.len(),
            mean_conf_success: mean_where(samples, true),
            mean_conf_failure: mean_where(samples, false),
        })
    })?;
    Ok(CompletionCurve { points })
}

/// Equal-mass reliability diagram at one completion level.
pub fn reliability_at(
    episodes: &[EpisodeRecord],
    pct: usize,
    agg: TemporalAggregation,
    m_bins: usize,
) -> Result<BinnedDiagram> {
    check_enough(episodes, m_bins)?;
    if pct >= COMPLETION_LEVELS {
        return Err(Error::OutOfRange { what: "completion percent", value: pct as f64 });
    }
    let samples = episodes
        .iter()
        .map(|ep| {
            let t = timestep_at_completion(ep, pct)?;
            Ok(ConfidenceSample { confidence: aggregated_confidence(ep, t, agg)?, outcome: ep.outcome })
        })
        .collect::<Result<Vec<_>>>()?;
    equal_mass_bins(&samples, m_bins)
}
