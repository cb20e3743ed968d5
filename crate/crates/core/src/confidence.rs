//! Confidence extraction: per-timestep baseline confidence, prompt-ensemble
//! averaging, and reduction of a trajectory to one trial-level sample.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{metric_report, MetricReport};
use crate::par;
use crate::types::{ConfidenceSample, EpisodeRecord, TimestepRecord};

/// Mean over action dimensions of the selected token's probability.
pub fn baseline_confidence(step: &TimestepRecord) -> Result<f64> {
    if step.dims.is_empty() {
        return Err(Error::EmptyDims);
    }
    Ok(step.top_probs().sum::<f64>() / step.dims.len() as f64)
}

/// Arithmetic mean of per-variant confidences.
pub fn ensemble_confidence(variant_confidences: &[f64]) -> Result<f64> {
    if variant_confidences.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if let Some(bad) = variant_confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::OutOfRange { what: "variant confidence", value: *bad });
    }
    Ok(variant_confidences.iter().sum::<f64>() / variant_confidences.len() as f64)
}

/// How per-timestep confidences are reduced to one number per trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialAggregation {
    /// Confidence at `t = 1`, before the first action is executed.
    #[default]
    PreAction,
    Mean,
    Min,
    Max,
}

/// Which instruction variants feed the per-timestep ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnsembleChoice {
    /// Variant 0 only.
    #[default]
    Original,
    /// The first `k` variants in id order (variant 0 first); `None` means all.
    First(Option<usize>),
}

impl EnsembleChoice {
    pub fn from_flags(use_ensemble: bool, ensemble_size: Option<usize>) -> Self {
        if use_ensemble {
            Self::First(ensemble_size)
        } else {
            Self::Original
        }
    }
}

/// Ensemble confidence at timestep `t` over the given variant indices.
fn ensemble_at(episode: &EpisodeRecord, variants: &[usize], t: usize) -> Result<f64> {
    let per_variant = variants
        .iter()
        .map(|&vi| {
            let v = &episode.variants[vi];
            let step = v.step(t).ok_or_else(|| Error::MissingTimestep {
                episode: episode.episode_id.clone(),
                variant: v.variant_id,
                t,
            })?;
            baseline_confidence(step)
        })
        .collect::<Result<Vec<_>>>()?;
    ensemble_confidence(&per_variant)
}

fn aggregate(agg: TrialAggregation, episode: &EpisodeRecord, variants: &[usize]) -> Result<f64> {
    if agg == TrialAggregation::PreAction {
        return ensemble_at(episode, variants, 1);
    }
    // Only timesteps present in every selected variant.
    let horizon = variants.iter().map(|&vi| episode.variants[vi].len()).min().unwrap_or(0);
    if horizon == 0 {
        return Err(Error::MissingTimestep {
            episode: episode.episode_id.clone(),
            variant: episode.variants[variants[0]].variant_id,
            t: 1,
        });
    }
    let per_step = (1..=horizon)
        .map(|t| ensemble_at(episode, variants, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(match agg {
        TrialAggregation::Mean => per_step.iter().sum::<f64>() / per_step.len() as f64,
        TrialAggregation::Min => per_step.iter().copied().fold(f64::INFINITY, f64::min),
        TrialAggregation::Max => per_step.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        TrialAggregation::PreAction => unreachable!(),
    })
}

/// One trial-level sample: ensemble per timestep first, then aggregate over
/// time.
pub fn trial_confidence(
    episode: &EpisodeRecord,
    agg: TrialAggregation,
    ensemble: EnsembleChoice,
) -> Result<ConfidenceSample> {
    let available = episode.num_variants();
    let k = match ensemble {
        EnsembleChoice::Original => 1,
        EnsembleChoice::First(None) => available,
        EnsembleChoice::First(Some(k)) => k,
    };
    if k == 0 || k > available {
        return Err(Error::NotEnoughVariants {
            episode: episode.episode_id.clone(),
            requested: k,
            available,
        });
    }
    let chosen: Vec<usize> = (0..k).collect();
    let confidence = aggregate(agg, episode, &chosen)?;
    Ok(ConfidenceSample { confidence, outcome: episode.outcome })
}

/// Trial samples for a whole log.
pub fn trial_samples(
    episodes: &[EpisodeRecord],
    agg: TrialAggregation,
    ensemble: EnsembleChoice,
) -> Result<Vec<ConfidenceSample>> {
    crate::types::shared_dims(episodes)?;
    episodes.iter().map(|ep| trial_confidence(ep, agg, ensemble)).collect()
}

/// Pre-action ensemble confidences over `trials` random `k`-subsets of the
/// episode's variants, drawn uniformly without replacement.
pub fn subsample_ensembles<R: Rng + ?Sized>(
    episode: &EpisodeRecord,
    k: usize,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<ConfidenceSample>> {
    let available = episode.num_variants();
    if k == 0 || k > available {
        return Err(Error::KTooLarge { k, available });
    }
    // Per-variant pre-action confidences are fixed; only the subset varies.
    let at_start = (0..available)
        .map(|vi| ensemble_at(episode, &[vi], 1))
        .collect::<Result<Vec<_>>>()?;
    let mut picked = Vec::with_capacity(k);
    (0..trials)
        .map(|_| {
            picked.clear();
            picked.extend(index::sample(rng, available, k).into_iter().map(|i| at_start[i]));
            Ok(ConfidenceSample { confidence: ensemble_confidence(&picked)?, outcome: episode.outcome })
        })
        .collect()
}

/// Mean test metrics over random ensembles of one size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AblationRow {
    pub k: usize,
    pub trials: usize,
    pub mean_ece1: f64,
    pub sd_ece1: f64,
    pub mean_ece2: f64,
    pub mean_brier: f64,
    pub mean_nll: f64,
}

/// Ensemble-size ablation on pre-action confidences. For each `k`, every
/// trial draws one random `k`-subset of variants per episode and scores the
/// whole log; when `k` covers every variant there is nothing to draw and a
/// single trial is run. Trial `i` uses stream `i` of `seed`.
pub fn ensemble_ablation(
    episodes: &[EpisodeRecord],
    k_list: &[usize],
    trials: usize,
    seed: u64,
    m_bins: usize,
) -> Result<Vec<AblationRow>> {
    crate::types::shared_dims(episodes)?;
    if trials == 0 {
        return Err(Error::OutOfRange { what: "trials", value: 0.0 });
    }
    let at_start: Vec<Vec<f64>> = episodes
        .iter()
        .map(|ep| (0..ep.num_variants()).map(|vi| ensemble_at(ep, &[vi], 1)).collect())
        .collect::<Result<_>>()?;
    let available = at_start.iter().map(Vec::len).min().unwrap_or(0);
    k_list
        .iter()
        .map(|&k| {
            if k == 0 || k > available {
                return Err(Error::KTooLarge { k, available });
            }
            let all = at_start.iter().all(|v| v.len() == k);
            let runs = if all { 1 } else { trials };
            let reports = par::try_map_range(runs, |trial| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(trial as u64);
                let samples: Vec<ConfidenceSample> = at_start
                    .iter()
                    .zip(episodes)
                    .map(|(confs, ep)| {
                        let sum: f64 = index::sample(&mut rng, confs.len(), k).into_iter().map(|i| confs[i]).sum();
                        ConfidenceSample { confidence: sum / k as f64, outcome: ep.outcome }
                    })
                    .collect();
                metric_report(&samples, m_bins)
            })?;
            let n = reports.len() as f64;
            let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
            let mean_ece1 = mean(|r| r.ece1);
            let var = reports.iter().map(|r| (r.ece1 - mean_ece1).powi(2)).sum::<f64>() / n;
            Ok(AblationRow {
                k,
                trials: reports.len(),
                mean_ece1,
                sd_ece1: var.sqrt(),
                mean_ece2: mean(|r| r.ece2),
                mean_brier: mean(|r| r.brier),
                mean_nll: mean(|r| r.nll),
            })
        })
        .collect()
}
