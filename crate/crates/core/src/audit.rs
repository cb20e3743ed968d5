//! Per-dimension calibration audit and success-vs-calibration tables.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{metric_report, MetricReport};
use crate::recalibrate::DimSamples;
use crate::types::ConfidenceSample;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionRow {
    pub dim_index: usize,
    pub ece1: f64,
    pub brier: f64,
    pub nll: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionAudit {
    pub per_dim: Vec<DimensionRow>,
}

impl DimensionAudit {
    /// Largest over smallest per-dimension ECE1; infinite if some dimension
    /// is perfectly calibrated.
    pub fn ece1_spread(&self) -> f64 {
        let max = self.per_dim.iter().map(|r| r.ece1).fold(f64::NEG_INFINITY, f64::max);
        let min = self.per_dim.iter().map(|r| r.ece1).fold(f64::INFINITY, f64::min);
        max / min
    }
}

/// Scores each dimension's pre-action confidence against the trial outcome.
pub fn dimension_audit(data: &DimSamples, m_bins: usize) -> Result<DimensionAudit> {
    data.validate()?;
    let per_dim = (0..data.dims())
        .map(|d| {
            let r = metric_report(&data.column(d), m_bins)?;
            Ok(DimensionRow { dim_index: d, ece1: r.ece1, brier: r.brier, nll: r.nll, n: r.n })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DimensionAudit { per_dim })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRow {
    pub label: String,
    pub error_rate: f64,
    pub ece1: f64,
    pub ece2: f64,
    pub brier: f64,
    pub nll: f64,
    pub n: usize,
}

/// Rank correlation between a group's error rate and each metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankCorrelations {
    pub ece1: Option<f64>,
    pub ece2: Option<f64>,
    pub brier: Option<f64>,
    pub nll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuccessCalibrationTable {
    pub rows: Vec<GroupRow>,
    pub spearman: RankCorrelations,
}

/// Ranks starting at 1; ties get the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        order[i..j].iter().for_each(|&k| ranks[k] = rank);
        i = j;
    }
    ranks
}

/// Spearman correlation with average ranks. `None` for fewer than three
/// points or when either side has no rank variance.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

pub fn success_vs_calibration_table(
    groups: &[(String, Vec<ConfidenceSample>)],
    m_bins: usize,
) -> Result<SuccessCalibrationTable> {
    let rows = groups
        .iter()
        .map(|(label, samples)| {
            if samples.is_empty() {
                return Err(Error::EmptyGroup(label.clone()));
            }
            let MetricReport { ece1, ece2, brier, nll, n, .. } = metric_report(samples, m_bins)?;
            let failures = samples.iter().filter(|s| !s.outcome).count();
            Ok(GroupRow { label: label.clone(), error_rate: failures as f64 / n as f64, ece1, ece2, brier, nll, n })
        })
        .collect::<Result<Vec<_>>>()?;
    let err: Vec<f64> = rows.iter().map(|r| r.error_rate).collect();
    let corr = |f: fn(&GroupRow) -> f64| spearman(&err, &rows.iter().map(f).collect::<Vec<_>>());
    let spearman = RankCorrelations {
        ece1: corr(|r| r.ece1),
        ece2: corr(|r| r.ece2),
        brier: corr(|r| r.brier),
        nll: corr(|r| r.nll),
    };
    Ok(SuccessCalibrationTable { rows, spearman })
}
