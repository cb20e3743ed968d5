//! Calibration metrics: equal-mass binned ECE, Brier score and NLL.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{Bin, BinnedDiagram, ConfidenceSample};

/// Bin count used throughout the pre-action evaluation protocol.
pub const DEFAULT_BINS: usize = 12;

/// Clamp applied to confidences before taking logs in [`nll`].
pub const DEFAULT_NLL_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub ece1: f64,
    pub ece2: f64,
    pub brier: f64,
    pub nll: f64,
    pub n: usize,
    pub m_bins: usize,
}

fn check_bins(n: usize, m: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if m == 0 || m > n {
        return Err(Error::TooManyBins { bins: m, samples: n });
    }
    Ok(())
}

/// Sorts samples by confidence (stable, so ties keep input order) and splits
/// them into `m` bins; bin `j` holds sorted indices
/// `floor(j*N/m) .. floor((j+1)*N/m)`.
///
/// Samples with exactly equal confidence are indistinguishable to the
/// estimator, so each one contributes the mean outcome of its tie run. With
/// distinct confidences this is the plain per-bin accuracy; with ties it
/// makes the diagram independent of input order, and a constant predictor
/// at the base rate gets zero ECE for every `m`.
pub fn equal_mass_bins(samples: &[ConfidenceSample], m: usize) -> Result<BinnedDiagram> {
    let n = samples.len();
    check_bins(n, m)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.confidence.total_cmp(&b.confidence));
    let outcomes = tie_averaged_outcomes(&sorted);

    let bins = (0..m)
        .map(|j| {
            let lo = j * n / m;
            let hi = (j + 1) * n / m;
            let count = hi - lo;
            let conf: f64 = sorted[lo..hi].iter().map(|s| s.confidence).sum();
            let acc: f64 = outcomes[lo..hi].iter().sum();
            Bin {
                count,
                mean_confidence: conf / count as f64,
                mean_accuracy: acc / count as f64,
            }
        })
        .collect();
    Ok(BinnedDiagram { bins, total_n: n })
}

fn tie_averaged_outcomes(sorted: &[ConfidenceSample]) -> Vec<f64> {
    let mut out: Vec<f64> = sorted.iter().map(ConfidenceSample::y).collect();
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end].confidence == sorted[start].confidence {
            end += 1;
        }
        if end - start > 1 {
            let mean = out[start..end].iter().sum::<f64>() / (end - start) as f64;
            out[start..end].fill(mean);
        }
        start = end;
    }
    out
}

/// Binned ECE with exponent `q` computed from an existing diagram.
pub fn ece_from_diagram(diagram: &BinnedDiagram, q: u32) -> Result<f64> {
    let n = diagram.total_n as f64;
    match q {
        1 => Ok(diagram
            .bins
            .iter()
            .map(|b| b.count as f64 / n * (b.mean_accuracy - b.mean_confidence).abs())
            .sum()),
        2 => Ok(diagram
            .bins
            .iter()
            .map(|b| {
                let gap = b.mean_accuracy - b.mean_confidence;
                b.count as f64 / n * gap * gap
            })
            .sum::<f64>()
            .sqrt()),
        other => Err(Error::InvalidQ(other)),
    }
}

/// Equal-mass binned `ECE_q` for `q` in {1, 2}.
pub fn ece(samples: &[ConfidenceSample], q: u32, m: usize) -> Result<f64> {
    if q != 1 && q != 2 {
        return Err(Error::InvalidQ(q));
    }
    ece_from_diagram(&equal_mass_bins(samples, m)?, q)
}

/// Mean squared difference between confidence and outcome.
pub fn brier(samples: &[ConfidenceSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: f64 = samples
        .iter()
        .map(|s| {
            let d = s.confidence - s.y();
            d * d
        })
        .sum();
    Ok(total / samples.len() as f64)
}

/// Binary log loss of one prediction. The probabilities given to success
/// and to failure are each clamped to `[epsilon, 1 - epsilon]`, so a sure
/// miss costs exactly `-ln(epsilon)`.
pub(crate) fn log_loss(p: f64, y: f64, epsilon: f64) -> f64 {
    let hi = 1.0 - epsilon;
    -(y * p.clamp(epsilon, hi).ln() + (1.0 - y) * (1.0 - p).clamp(epsilon, hi).ln())
}

/// Mean negative log-likelihood (natural log) with clamped confidences.
pub fn nll(samples: &[ConfidenceSample], epsilon: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::OutOfRange { what: "nll epsilon", value: epsilon });
    }
    let total: f64 = samples.iter().map(|s| log_loss(s.confidence, s.y(), epsilon)).sum();
    Ok(total / samples.len() as f64)
}

/// ECE1, ECE2, Brier and NLL over one shared sample set.
pub fn metric_report(samples: &[ConfidenceSample], m: usize) -> Result<MetricReport> {
    let diagram = equal_mass_bins(samples, m)?;
    Ok(MetricReport {
        ece1: ece_from_diagram(&diagram, 1)?,
        ece2: ece_from_diagram(&diagram, 2)?,
        brier: brier(samples)?,
        nll: nll(samples, DEFAULT_NLL_EPSILON)?,
        n: samples.len(),
        m_bins: m,
    })
}
