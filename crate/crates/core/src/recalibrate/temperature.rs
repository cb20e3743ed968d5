use super::{fit_targets, DimSamples, FitConfig, FitMeta, RecalParams, Recalibrator};
use crate::error::{Error, Result};
use crate::metrics::log_loss;
use crate::optimize::golden_section;
use crate::types::max_softmax;

/// Search range for `ln T`.
const LOG_T_RANGE: f64 = 5.0;
const LOG_T_TOL: f64 = 1e-6;
const MAX_CYCLES: usize = 50;
const CYCLE_IMPROVEMENT_TOL: f64 = 1e-10;

/// Trial confidence after dividing every dimension's logits by `temperature`.
pub fn tempered_confidence(logits: &[Vec<f64>], temperature: f64) -> f64 {
    logits.iter().map(|z| max_softmax(z, temperature)).sum::<f64>() / logits.len() as f64
}

/// Mean clamped NLL of per-dimension tempered confidences.
pub fn temperature_nll(data: &DimSamples, temperatures: &[f64], epsilon: f64) -> Result<f64> {
    let logits = checked_logits(data)?;
    let total: f64 = logits
        .iter()
        .zip(&data.outcomes)
        .map(|(row, &y)| {
            let c = row.iter().zip(temperatures.iter().cycle()).map(|(z, &t)| max_softmax(z, t)).sum::<f64>()
                / row.len() as f64;
            log_loss(c, if y { 1.0 } else { 0.0 }, epsilon)
        })
        .sum();
    Ok(total / data.len() as f64)
}

fn checked_logits(data: &DimSamples) -> Result<&Vec<Vec<Vec<f64>>>> {
    let logits = data.require_logits()?;
    for (trial, row) in logits.iter().enumerate() {
        if row.len() != data.dims() {
            return Err(Error::MissingLogits { trial, dim: row.len() });
        }
    }
    Ok(logits)
}

fn log_t_bound(cfg: &FitConfig) -> f64 {
    LOG_T_RANGE.min(cfg.param_bound)
}

/// Fits one temperature shared by all dimensions by golden-section search
/// over `ln T` in `[-5, 5]`. Confidences are recomputed from the logits for
/// every candidate temperature.
pub fn fit_temperature(data: &DimSamples, cfg: &FitConfig) -> Result<Recalibrator> {
    cfg.validate()?;
    data.validate()?;
    let logits = checked_logits(data)?;
    let targets = fit_targets(&data.outcomes, cfg)?;
    let bound = log_t_bound(cfg);
    let n = data.len() as f64;
    let objective = |log_t: f64| {
        let t = log_t.exp();
        logits
            .iter()
            .zip(&targets)
            .map(|(row, &y)| log_loss(tempered_confidence(row, t), y, cfg.epsilon))
            .sum::<f64>()
            / n
    };
    let (log_t, value) = golden_section(objective, -bound, bound, LOG_T_TOL);
    if !value.is_finite() {
        return Err(Error::NonFinite("temperature objective"));
    }
    Recalibrator::new(
        RecalParams::Temperature(log_t.exp()),
        FitMeta { n: data.len(), seed: None, converged: true, iterations: 1, mode: None },
    )
}

/// Fits one temperature per dimension by coordinate descent: cycles of
/// per-dimension golden-section searches, warm-started at the global fit,
/// until a full cycle improves the NLL by less than `1e-10` (or 50 cycles).
pub fn fit_actionwise_temperature(data: &DimSamples, cfg: &FitConfig) -> Result<Recalibrator> {
    let global = match fit_temperature(data, cfg)?.params {
        RecalParams::Temperature(t) => t,
        _ => unreachable!(),
    };
    let logits = checked_logits(data)?;
    let targets = fit_targets(&data.outcomes, cfg)?;
    let d = data.dims();
    let n = data.len();
    let bound = log_t_bound(cfg);
    let inv_d = 1.0 / d as f64;

    let mut log_ts = vec![global.ln(); d];
    // gaps[i * d + k] = logits of trial i, dimension k shifted so the max is 0
    let gaps: Vec<Vec<f64>> = logits
        .iter()
        .flat_map(|row| {
            row.iter().map(|z| {
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                z.iter().map(|v| v - max).collect()
            })
        })
        .collect();
    let top = |g: &[f64], t: f64| 1.0 / g.iter().map(|v| (v / t).exp()).sum::<f64>();
    // cache[i * d + k] = max softmax of trial i, dimension k at its current temperature
    let mut cache: Vec<f64> = gaps.iter().map(|g| top(g, global)).collect();
    let mut sums: Vec<f64> = cache.chunks(d).map(|c| c.iter().sum()).collect();
    let total_nll = |sums: &[f64]| {
        sums.iter().zip(&targets).map(|(s, &y)| log_loss(s * inv_d, y, cfg.epsilon)).sum::<f64>() / n as f64
    };
    let mut value = total_nll(&sums);

    let mut cycles = 0;
    let mut converged = false;
    while cycles < MAX_CYCLES {
        cycles += 1;
        let start = value;
        for k in 0..d {
            let objective = |log_t: f64| {
                let t = log_t.exp();
                (0..n)
                    .map(|i| {
                        let s = sums[i] - cache[i * d + k] + top(&gaps[i * d + k], t);
                        log_loss(s * inv_d, targets[i], cfg.epsilon)
                    })
                    .sum::<f64>()
                    / n as f64
            };
            let (candidate, cand_value) = golden_section(objective, -bound, bound, LOG_T_TOL);
            if cand_value < value {
                let t = candidate.exp();
                for i in 0..n {
                    let fresh = top(&gaps[i * d + k], t);
                    sums[i] += fresh - cache[i * d + k];
                    cache[i * d + k] = fresh;
                }
                log_ts[k] = candidate;
                // Recompute to avoid drift in the incremental sums.
                sums = cache.chunks(d).map(|c| c.iter().sum()).collect();
                value = total_nll(&sums);
            }
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("action-wise temperature objective"));
        }
        if start - value < CYCLE_IMPROVEMENT_TOL {
            converged = true;
            break;
        }
    }
    Recalibrator::new(
        RecalParams::ActionwiseTemperature(log_ts.into_iter().map(f64::exp).collect()),
        FitMeta { n, seed: None, converged, iterations: cycles, mode: None },
    )
}
