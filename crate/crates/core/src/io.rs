//! Episode-log ingestion and report export.
//!
//! Logs are line-delimited JSON, one episode per line:
//!
//! ```text
//! {"schema_version":1,"episode_id":"ep0","task_id":"t","outcome":1,
//!  "variants":[{"variant_id":0,"instruction_text":"pick up the bowl",
//!   "steps":[{"t":1,"proximity":false,"dims":[{"top_prob":0.8}]}]}]}
//! ```
//!
//! `proximity` defaults to false; `chosen_token` and `logits` are optional
//! per dimension. Blank lines are ignored. Floats are written in shortest
//! round-trip form, so write-then-parse reproduces every value exactly.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audit::{DimensionAudit, SuccessCalibrationTable};
use crate::confidence::AblationRow;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::monitor::HaltDecision;
use crate::recalibrate::protocol::MethodSummary;
use crate::synth::GroundTruth;
use crate::temporal::CompletionCurve;
use crate::types::{BinnedDiagram, DimensionStep, EpisodeRecord, ThresholdProfile, TimestepRecord, VariantTrajectory};

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireEpisode {
    schema_version: i64,
    episode_id: String,
    task_id: String,
    outcome: u8,
    variants: Vec<WireVariant>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireVariant {
    variant_id: u32,
    instruction_text: String,
    steps: Vec<WireStep>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireStep {
    t: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    proximity: bool,
    dims: Vec<WireDim>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireDim {
    top_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chosen_token: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logits: Option<Vec<f64>>,
}

impl From<&EpisodeRecord> for WireEpisode {
    fn from(ep: &EpisodeRecord) -> Self {
        WireEpisode {
            schema_version: SCHEMA_VERSION,
            episode_id: ep.episode_id.clone(),
            task_id: ep.task_id.clone(),
            outcome: u8::from(ep.outcome),
            variants: ep
                .variants
                .iter()
                .map(|v| WireVariant {
                    variant_id: v.variant_id,
                    instruction_text: v.instruction_text.clone(),
                    steps: v
                        .steps
                        .iter()
                        .map(|s| WireStep {
                            t: s.t,
                            proximity: s.proximity,
                            dims: s
                                .dims
                                .iter()
                                .map(|d| WireDim {
                                    top_prob: d.top_prob,
                                    chosen_token: d.chosen_token,
                                    logits: d.logits.clone(),
                                })
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl WireEpisode {
    fn into_record(self) -> std::result::Result<EpisodeRecord, (String, String)> {
        let outcome = match self.outcome {
            0 => false,
            1 => true,
            other => return Err(("outcome".into(), format!("expected 0 or 1, found {other}"))),
        };
        let variants = self
            .variants
            .into_iter()
            .map(|v| VariantTrajectory {
                variant_id: v.variant_id,
                instruction_text: v.instruction_text,
                steps: v
                    .steps
                    .into_iter()
                    .map(|s| TimestepRecord {
                        t: s.t,
                        proximity: s.proximity,
                        dims: s
                            .dims
                            .into_iter()
                            .map(|d| DimensionStep { top_prob: d.top_prob, logits: d.logits, chosen_token: d.chosen_token })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        // Keep the file's variant order so reported paths match the input.
        let ep = EpisodeRecord { episode_id: self.episode_id, task_id: self.task_id, outcome, variants };
        match ep.validate() {
            Ok(()) => Ok(ep),
            Err(Error::Invalid { path, cause }) => Err((path, cause)),
            Err(other) => Err(("".into(), other.to_string())),
        }
    }
}

/// Parses one log line (1-based `line` for error reporting).
pub fn parse_episode(text: &str, line: usize) -> Result<EpisodeRecord> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::Parse { line, path: ".".into(), cause: e.to_string() })?;
    match value.get("schema_version") {
        Some(v) if v.as_i64() == Some(SCHEMA_VERSION) => {}
        Some(v) => match v.as_i64() {
            Some(version) => return Err(Error::SchemaVersionUnsupported { line, version }),
            None => {
                return Err(Error::Parse { line, path: "schema_version".into(), cause: "expected an integer".into() })
            }
        },
        None => return Err(Error::Parse { line, path: "schema_version".into(), cause: "missing field".into() }),
    }
    let wire: WireEpisode = serde_path_to_error::deserialize(value)
        .map_err(|e| Error::Parse { line, path: e.path().to_string(), cause: e.into_inner().to_string() })?;
    wire.into_record().map_err(|(path, cause)| Error::Parse { line, path, cause })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Stop at the first bad record.
    #[default]
    Strict,
    /// Skip bad records and report them all.
    Lenient,
}

#[derive(Debug, Default)]
pub struct ParsedLog {
    pub episodes: Vec<EpisodeRecord>,
    /// Errors for skipped lines; always empty in strict mode.
    pub errors: Vec<Error>,
}

pub fn parse_log<R: BufRead>(reader: R, mode: ParseMode) -> Result<ParsedLog> {
    let mut out = ParsedLog::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_episode(&line, i + 1) {
            Ok(ep) => out.episodes.push(ep),
            Err(e) if mode == ParseMode::Lenient => out.errors.push(e),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Strictly parses a log file.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<EpisodeRecord>> {
    let file = std::fs::File::open(path)?;
    Ok(parse_log(std::io::BufReader::new(file), ParseMode::Strict)?.episodes)
}

pub fn episode_to_line(episode: &EpisodeRecord) -> String {
    serde_json::to_string(&WireEpisode::from(episode)).expect("episode serializes")
}

pub fn write_log<W: Write>(mut writer: W, episodes: &[EpisodeRecord]) -> Result<()> {
    for ep in episodes {
        writeln!(writer, "{}", episode_to_line(ep))?;
    }
    writer.flush()?;
    Ok(())
}

/// Ground truth as one JSON header line with the config, then one line per
/// episode.
pub fn write_ground_truth<W: Write>(mut writer: W, truth: &GroundTruth) -> Result<()> {
    writeln!(writer, "{}", serde_json::json!({ "config": truth.config }))?;
    for ep in &truth.episodes {
        writeln!(writer, "{}", serde_json::to_string(ep).expect("truth serializes"))?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_rows<W: Write, T: Serialize>(writer: W, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metric_report_csv<W: Write>(writer: W, report: &MetricReport) -> Result<()> {
    csv_rows(writer, [report])
}

pub fn write_curve_csv<W: Write>(writer: W, curve: &CompletionCurve) -> Result<()> {
    csv_rows(writer, &curve.points)
}

#[derive(Serialize)]
struct ReliabilityRow {
    bin_index: usize,
    count: usize,
    mean_confidence: f64,
    mean_accuracy: f64,
}

pub fn write_reliability_csv<W: Write>(writer: W, diagram: &BinnedDiagram) -> Result<()> {
    csv_rows(
        writer,
        diagram.bins.iter().enumerate().map(|(bin_index, b)| ReliabilityRow {
            bin_index,
            count: b.count,
            mean_confidence: b.mean_confidence,
            mean_accuracy: b.mean_accuracy,
        }),
    )
}

/// 100 `pct,threshold` rows after a `# quantile_level=q` comment line.
pub fn write_thresholds_csv<W: Write>(mut writer: W, profile: &ThresholdProfile) -> Result<()> {
    writeln!(writer, "# quantile_level={}", profile.quantile_level)?;
    writeln!(writer, "pct,threshold")?;
    for (pct, t) in profile.thresholds.iter().enumerate() {
        writeln!(writer, "{pct},{t}")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_thresholds_csv<R: BufRead>(reader: R) -> Result<ThresholdProfile> {
    let mut quantile_level = None;
    let mut thresholds = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        let bad = |path: &str, cause: String| Error::Parse { line: i + 1, path: path.into(), cause };
        if let Some(q) = line.strip_prefix("# quantile_level=") {
            quantile_level = Some(q.parse::<f64>().map_err(|e| bad("quantile_level", e.to_string()))?);
        } else if line.is_empty() || line == "pct,threshold" {
            continue;
        } else {
            let (pct, t) = line.split_once(',').ok_or_else(|| bad("row", "expected `pct,threshold`".into()))?;
            let pct: usize = pct.parse().map_err(|_| bad("pct", format!("bad value `{pct}`")))?;
            if pct != thresholds.len() {
                return Err(bad("pct", format!("expected {}, found {pct}", thresholds.len())));
            }
            thresholds.push(t.parse::<f64>().map_err(|_| bad("threshold", format!("bad value `{t}`")))?);
        }
    }
    let quantile_level =
        quantile_level.ok_or_else(|| Error::Parse { line: 1, path: "quantile_level".into(), cause: "missing".into() })?;
    let profile = ThresholdProfile { quantile_level, thresholds };
    profile.validate()?;
    Ok(profile)
}

pub fn write_decisions_csv<W: Write>(writer: W, decisions: &[HaltDecision]) -> Result<()> {
    csv_rows(writer, decisions)
}

pub fn write_audit_csv<W: Write>(writer: W, audit: &DimensionAudit) -> Result<()> {
    csv_rows(writer, &audit.per_dim)
}

/// Per-group rows, then the rank correlations in a second table separated
/// by a blank line.
pub fn write_compare_csv<W: Write>(mut writer: W, table: &SuccessCalibrationTable) -> Result<()> {
    csv_rows(&mut writer, &table.rows)?;
    writeln!(writer)?;
    #[derive(Serialize)]
    struct Corr {
        metric: &'static str,
        spearman_vs_error_rate: Option<f64>,
    }
    let s = &table.spearman;
    csv_rows(
        writer,
        [("ece1", s.ece1), ("ece2", s.ece2), ("brier", s.brier), ("nll", s.nll)]
            .map(|(metric, v)| Corr { metric, spearman_vs_error_rate: v }),
    )
}

pub fn write_ablation_csv<W: Write>(writer: W, rows: &[AblationRow]) -> Result<()> {
    csv_rows(writer, rows)
}

pub fn write_split_summary_csv<W: Write>(writer: W, rows: &[MethodSummary]) -> Result<()> {
    csv_rows(writer, rows)
}
