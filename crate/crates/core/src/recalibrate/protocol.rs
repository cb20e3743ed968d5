//! Repeated random calibration/test splits for comparing recalibrators.
//!
//! Each split shuffles the trials with its own seeded stream, fits every
//! requested method on the calibration part and scores it on the rest.
//! Splits are independent and run in parallel; results are returned in
//! split order, so the output is the same whatever the thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    fit_actionwise_platt, fit_actionwise_temperature, fit_platt, fit_temperature, recalibrate_samples, DimSamples,
    FitConfig, FitMode, RecalInput, Recalibrator,
};
use crate::error::{Error, Result};
use crate::metrics::{metric_report, MetricReport};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Platt,
    Temperature,
    ActionwisePlatt(FitMode),
    ActionwiseTemperature,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Platt => "platt",
            Method::Temperature => "temperature",
            Method::ActionwisePlatt(FitMode::Joint) => "aw-platt",
            Method::ActionwisePlatt(FitMode::Independent) => "aw-platt-independent",
            Method::ActionwiseTemperature => "aw-temp",
        }
    }

    pub fn needs_logits(self) -> bool {
        matches!(self, Method::Temperature | Method::ActionwiseTemperature)
    }

    pub fn fit(self, data: &DimSamples, cfg: &FitConfig) -> Result<Recalibrator> {
        match self {
            Method::Platt => fit_platt(&data.baseline(), cfg),
            Method::Temperature => fit_temperature(data, cfg),
            Method::ActionwisePlatt(mode) => fit_actionwise_platt(data, cfg, mode),
            Method::ActionwiseTemperature => fit_actionwise_temperature(data, cfg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitProtocol {
    /// Share of trials used for fitting.
    pub calibration_fraction: f64,
    pub splits: usize,
    pub seed: u64,
    pub bins: usize,
    pub fit: FitConfig,
}

impl Default for SplitProtocol {
    fn default() -> Self {
        Self { calibration_fraction: 0.2, splits: 1000, seed: 0, bins: 10, fit: FitConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    pub test: MetricReport,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub split: usize,
    pub calibration_size: usize,
    /// Baseline (mean over dimensions) confidence on the test part.
    pub uncalibrated: MetricReport,
    pub methods: Vec<MethodResult>,
}

/// Shuffles `0..n` and returns (calibration, test) index sets.
pub fn split_indices(n: usize, calibration_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let cal = ((n as f64 * calibration_fraction).round() as usize).clamp(1, n.saturating_sub(1));
    let test = idx.split_off(cal);
    (idx, test)
}

/// The random stream for split `split` under `seed`.
pub fn split_rng(seed: u64, split: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split as u64);
    rng
}

pub fn run_splits(data: &DimSamples, methods: &[Method], protocol: &SplitProtocol) -> Result<Vec<SplitResult>> {
    data.validate()?;
    if !(protocol.calibration_fraction > 0.0 && protocol.calibration_fraction < 1.0) {
        return Err(Error::OutOfRange { what: "calibration fraction", value: protocol.calibration_fraction });
    }
    if data.len() < 2 {
        return Err(Error::EmptyInput);
    }
    if methods.iter().any(|m| m.needs_logits()) {
        data.require_logits()?;
    }
    par::try_map_range(protocol.splits, |split| {
        let (cal_idx, test_idx) = split_indices(data.len(), protocol.calibration_fraction, &mut split_rng(protocol.seed, split));
        let cal = data.subset(&cal_idx);
        let test = data.subset(&test_idx);
        let uncalibrated = metric_report(&test.baseline(), protocol.bins)?;
        let methods = methods
            .iter()
            .map(|&method| {
                let r = method.fit(&cal, &protocol.fit)?;
                let out = recalibrate_samples(&r, RecalInput::Dims(&test))?;
                Ok(MethodResult { method, test: metric_report(&out, protocol.bins)?, converged: r.meta.converged })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SplitResult { split, calibration_size: cal_idx.len(), uncalibrated, methods })
    })
}

/// Mean test metrics over splits for one row of the comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub splits: usize,
    pub mean_ece1: f64,
    pub mean_ece2: f64,
    pub mean_brier: f64,
    pub mean_nll: f64,
    /// Splits where test ECE1 fell strictly below the uncalibrated value.
    pub ece1_improved: usize,
    pub converged: usize,
}

fn summary_row<'a>(name: &str, reports: impl Iterator<Item = (&'a MetricReport, &'a MetricReport, bool)>) -> MethodSummary {
    let mut s = MethodSummary {
        method: name.to_string(),
        splits: 0,
        mean_ece1: 0.0,
        mean_ece2: 0.0,
        mean_brier: 0.0,
        mean_nll: 0.0,
        ece1_improved: 0,
        converged: 0,
    };
    for (r, base, converged) in reports {
        s.splits += 1;
        s.mean_ece1 += r.ece1;
        s.mean_ece2 += r.ece2;
        s.mean_brier += r.brier;
        s.mean_nll += r.nll;
        s.ece1_improved += usize::from(r.ece1 < base.ece1);
        s.converged += usize::from(converged);
    }
    let k = s.splits.max(1) as f64;
    s.mean_ece1 /= k;
    s.mean_ece2 /= k;
    s.mean_brier /= k;
    s.mean_nll /= k;
    s
}

/// One row for the uncalibrated baseline, then one per method.
pub fn summarize(results: &[SplitResult]) -> Vec<MethodSummary> {
    let mut rows = vec![summary_row("uncalibrated", results.iter().map(|r| (&r.uncalibrated, &r.uncalibrated, true)))];
    if let Some(first) = results.first() {
        for (i, m) in first.methods.iter().enumerate() {
            rows.push(summary_row(
                m.method.name(),
                results.iter().map(|r| (&r.methods[i].test, &r.uncalibrated, r.methods[i].converged)),
            ));
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> DimSamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let s: f64 = rng.random_range(0.1..0.9);
            rows.push(vec![(s * 0.5 + 0.45).min(1.0), s]);
            ys.push(rng.random::<f64>() < s);
        }
        DimSamples::new(rows, ys).unwrap()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let (cal, test) = split_indices(100, 0.2, &mut split_rng(1, 0));
        assert_eq!(cal.len(), 20);
        assert_eq!(test.len(), 80);
        let mut all: Vec<usize> = cal.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let (cal2, _) = split_indices(100, 0.2, &mut split_rng(1, 1));
        assert_ne!(cal, cal2);
    }

    #[test]
    fn deterministic_given_seed() {
        let data = toy(600, 3);
        let protocol = SplitProtocol { splits: 8, seed: 42, ..SplitProtocol::default() };
        let methods = [Method::Platt, Method::ActionwisePlatt(FitMode::Joint)];
        let a = run_splits(&data, &methods, &protocol).unwrap();
        let b = run_splits(&data, &methods, &protocol).unwrap();
        assert_eq!(a, b);
        let rows = summarize(&a);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].method, "uncalibrated");
        assert_eq!(rows[2].method, "aw-platt");
        assert!(rows[1].mean_ece1 < rows[0].mean_ece1);
    }

    #[test]
    fn temperature_methods_need_logits() {
        let data = toy(50, 1);
        let protocol = SplitProtocol { splits: 2, ..SplitProtocol::default() };
        assert!(matches!(run_splits(&data, &[Method::Temperature], &protocol), Err(Error::MissingLogits { .. })));
    }
}
