//! Context-aware halting.
//!
//! A run is halted at the first step where both hold: the (aggregated)
//! confidence is strictly below the threshold for the step's completion
//! level, and the robot is near or touching an object. Thresholds are a
//! lower quantile of the confidences observed at each completion level
//! across a pool of episodes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::par;
use crate::temporal::{aggregate_all, baseline_trace, completion_of_step, samples_by_level, TemporalAggregation};
use crate::types::{EpisodeRecord, ThresholdProfile, COMPLETION_LEVELS};

pub const DEFAULT_QUANTILE: f64 = 0.10;

/// Nearest-rank lower quantile of an ascending slice: the element at index
/// `ceil(q * n) - 1`.
pub fn lower_quantile(sorted: &[f64], q: f64) -> f64 {
    sorted[quantile_index(sorted.len(), q)]
}

fn quantile_index(n: usize, q: f64) -> usize {
    // The slack keeps e.g. 0.3 * 10 = 3.0000000000000004 at rank 3.
    let rank = (q * n as f64 - 1e-9).ceil().max(1.0) as usize;
    rank.min(n) - 1
}

fn check_fit_inputs(episodes: &[EpisodeRecord], q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::BadQuantile(q));
    }
    if episodes.len() < 2 {
        return Err(Error::TooFewEpisodes { needed: 2, got: episodes.len() });
    }
    Ok(())
}

fn sorted_levels(episodes: &[EpisodeRecord], agg: TemporalAggregation) -> Result<Vec<Vec<f64>>> {
    Ok(samples_by_level(episodes, agg)?
        .into_iter()
        .map(|level| {
            let mut v: Vec<f64> = level.into_iter().map(|s| s.confidence).collect();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect())
}

/// Per-level lower quantile of aggregated confidence across `episodes`.
pub fn fit_thresholds(episodes: &[EpisodeRecord], quantile_level: f64, agg: TemporalAggregation) -> Result<ThresholdProfile> {
    check_fit_inputs(episodes, quantile_level)?;
    let thresholds = sorted_levels(episodes, agg)?.iter().map(|v| lower_quantile(v, quantile_level)).collect();
    Ok(ThresholdProfile { quantile_level, thresholds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    BelowThresholdAndProximal,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HaltDecision {
    pub episode_id: String,
    pub halted: bool,
    pub halt_timestep: Option<usize>,
    pub halt_pct: Option<usize>,
    pub reason: HaltReason,
}

/// Walks `t = 1..=T` and stops at the first step that is both below
/// threshold and proximal. Halting is final once triggered.
pub fn evaluate_halting(episode: &EpisodeRecord, profile: &ThresholdProfile, agg: TemporalAggregation) -> Result<HaltDecision> {
    if profile.thresholds.len() != COMPLETION_LEVELS {
        return Err(Error::MissingProfileLevels(profile.thresholds.len()));
    }
    let running = aggregate_all(&baseline_trace(episode)?, agg)?;
    let len = running.len();
    let steps = &episode.canonical().steps;
    for (i, conf) in running.iter().enumerate() {
        let t = i + 1;
        let pct = completion_of_step(len, t);
        if *conf < profile.thresholds[pct] && steps[i].proximity {
            return Ok(HaltDecision {
                episode_id: episode.episode_id.clone(),
                halted: true,
                halt_timestep: Some(t),
                halt_pct: Some(pct),
                reason: HaltReason::BelowThresholdAndProximal,
            });
        }
    }
    Ok(HaltDecision {
        episode_id: episode.episode_id.clone(),
        halted: false,
        halt_timestep: None,
        halt_pct: None,
        reason: HaltReason::None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorSummary {
    /// Halted runs that would have failed.
    pub halted_failed: usize,
    /// Halted runs that would have succeeded.
    pub halted_succeeded: usize,
    /// Failures the monitor let run.
    pub missed_failed: usize,
    pub not_halted_succeeded: usize,
    pub halt_rate: f64,
    pub halt_rate_failures: Option<f64>,
    pub halt_rate_successes: Option<f64>,
    #[serde(skip)]
    pub decisions: Vec<HaltDecision>,
}

fn summarize(episodes: &[EpisodeRecord], decisions: Vec<HaltDecision>) -> MonitorSummary {
    let mut s = MonitorSummary {
        halted_failed: 0,
        halted_succeeded: 0,
        missed_failed: 0,
        not_halted_succeeded: 0,
        halt_rate: 0.0,
        halt_rate_failures: None,
        halt_rate_successes: None,
        decisions: Vec::new(),
    };
    for (ep, d) in episodes.iter().zip(&decisions) {
        match (d.halted, ep.outcome) {
            (true, false) => s.halted_failed += 1,
            (true, true) => s.halted_succeeded += 1,
            (false, false) => s.missed_failed += 1,
            (false, true) => s.not_halted_succeeded += 1,
        }
    }
    let halted = s.halted_failed + s.halted_succeeded;
    let failures = s.halted_failed + s.missed_failed;
    let successes = s.halted_succeeded + s.not_halted_succeeded;
    s.halt_rate = if decisions.is_empty() { 0.0 } else { halted as f64 / decisions.len() as f64 };
    s.halt_rate_failures = (failures > 0).then(|| s.halted_failed as f64 / failures as f64);
    s.halt_rate_successes = (successes > 0).then(|| s.halted_succeeded as f64 / successes as f64);
    s.decisions = decisions;
    s
}

/// Evaluates every episode against one fixed profile.
pub fn monitor_report(episodes: &[EpisodeRecord], profile: &ThresholdProfile, agg: TemporalAggregation) -> Result<MonitorSummary> {
    profile.validate()?;
    let decisions = par::try_map_slice(episodes, |ep| evaluate_halting(ep, profile, agg))?;
    Ok(summarize(episodes, decisions))
}

/// Threshold profile fitted on every episode except `skip`.
fn leave_out_profile(sorted: &[Vec<f64>], own: &[f64], q: f64) -> ThresholdProfile {
    let thresholds = sorted
        .iter()
        .zip(own)
        .map(|(values, &mine)| {
            let pos = values.partition_point(|v| v.total_cmp(&mine).is_lt());
            let idx = quantile_index(values.len() - 1, q);
            if idx < pos {
                values[idx]
            } else {
                values[idx + 1]
            }
        })
        .collect();
    ThresholdProfile { quantile_level: q, thresholds }
}

/// Fits thresholds on the pool and evaluates the same pool. With
/// `leave_self_out`, each episode is judged against thresholds fitted on the
/// other episodes only; the decision rule itself is unchanged.
pub fn fit_and_evaluate(
    episodes: &[EpisodeRecord],
    quantile_level: f64,
    agg: TemporalAggregation,
    leave_self_out: bool,
) -> Result<(ThresholdProfile, MonitorSummary)> {
    check_fit_inputs(episodes, quantile_level)?;
    let levels = samples_by_level(episodes, agg)?;
    let mut sorted: Vec<Vec<f64>> = levels.iter().map(|l| l.iter().map(|s| s.confidence).collect()).collect();
    sorted.iter_mut().for_each(|v: &mut Vec<f64>| v.sort_by(f64::total_cmp));
    let profile = ThresholdProfile {
        quantile_level,
        thresholds: sorted.iter().map(|v| lower_quantile(v, quantile_level)).collect(),
    };
    if !leave_self_out {
        let summary = monitor_report(episodes, &profile, agg)?;
        return Ok((profile, summary));
    }
    let decisions = par::try_map_range(episodes.len(), |i| {
        let own: Vec<f64> = levels.iter().map(|l| l[i].confidence).collect();
        evaluate_halting(&episodes[i], &leave_out_profile(&sorted, &own, quantile_level), agg)
    })?;
    Ok((profile, summarize(episodes, decisions)))
}
