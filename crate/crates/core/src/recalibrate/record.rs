//! Plain-text serialization of fitted recalibrators.
//!
//! ```text
//! calibkit-recalibrator 1
//! kind actionwise_platt
//! dims 2
//! n 1000
//! seed 7
//! converged true
//! iterations 31
//! mode joint
//! param 0 1.7 -0.35
//! param 1 0.92 0.1
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so parsing a record
//! reproduces every parameter bit for bit. `seed` and `mode` may be `-`.

use std::fmt::Write as _;
use std::str::FromStr;

use super::{FitMeta, FitMode, PlattParams, RecalKind, RecalParams, Recalibrator};
use crate::error::{Error, Result};

pub const RECORD_HEADER: &str = "calibkit-recalibrator 1";

impl Recalibrator {
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        let kind = self.kind();
        let dims = self.dims().unwrap_or(1);
        let _ = writeln!(out, "{RECORD_HEADER}");
        let _ = writeln!(out, "kind {}", kind.name());
        let _ = writeln!(out, "dims {dims}");
        let _ = writeln!(out, "n {}", self.meta.n);
        match self.meta.seed {
            Some(seed) => writeln!(out, "seed {seed}"),
            None => writeln!(out, "seed -"),
        }
        .ok();
        let _ = writeln!(out, "converged {}", self.meta.converged);
        let _ = writeln!(out, "iterations {}", self.meta.iterations);
        let mode = match self.meta.mode {
            Some(FitMode::Joint) => "joint",
            Some(FitMode::Independent) => "independent",
            None => "-",
        };
        let _ = writeln!(out, "mode {mode}");
        match &self.params {
            RecalParams::Platt(p) => {
                let _ = writeln!(out, "param 0 {} {}", p.alpha, p.beta);
            }
            RecalParams::Temperature(t) => {
                let _ = writeln!(out, "param 0 {t}");
            }
            RecalParams::ActionwisePlatt(ps) => {
                for (i, p) in ps.iter().enumerate() {
                    let _ = writeln!(out, "param {i} {} {}", p.alpha, p.beta);
                }
            }
            RecalParams::ActionwiseTemperature(ts) => {
                for (i, t) in ts.iter().enumerate() {
                    let _ = writeln!(out, "param {i} {t}");
                }
            }
        }
        out
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let bad = |line: usize, path: &str, cause: String| Error::Parse { line: line + 1, path: path.to_string(), cause };

        match lines.next() {
            Some((_, l)) if l.trim() == RECORD_HEADER => {}
            Some((i, l)) => {
                let version = l.trim().strip_prefix("calibkit-recalibrator ").and_then(|v| v.parse::<i64>().ok());
                return Err(match version {
                    Some(version) => Error::SchemaVersionUnsupported { line: i + 1, version },
                    None => bad(i, "header", format!("expected `{RECORD_HEADER}`")),
                });
            }
            None => return Err(bad(0, "header", "empty record".into())),
        }

        fn field<'a>(
            lines: &mut impl Iterator<Item = (usize, &'a str)>,
            key: &str,
        ) -> Result<(usize, &'a str)> {
            let (i, l) = lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                path: key.to_string(),
                cause: "missing field".into(),
            })?;
            let rest = l.trim().strip_prefix(key).and_then(|r| r.strip_prefix(' ')).ok_or_else(|| Error::Parse {
                line: i + 1,
                path: key.to_string(),
                cause: format!("expected `{key} <value>`"),
            })?;
            Ok((i, rest.trim()))
        }
        fn parse<T: FromStr>((i, v): (usize, &str), key: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Parse { line: i + 1, path: key.to_string(), cause: format!("bad value `{v}`") })
        }

        let (ki, kind_text) = field(&mut lines, "kind")?;
        let kind = match kind_text {
            "platt" => RecalKind::Platt,
            "temperature" => RecalKind::Temperature,
            "actionwise_platt" => RecalKind::ActionwisePlatt,
            "actionwise_temperature" => RecalKind::ActionwiseTemperature,
            other => return Err(bad(ki, "kind", format!("unknown kind `{other}`"))),
        };
        let dims: usize = parse(field(&mut lines, "dims")?, "dims")?;
        let n: usize = parse(field(&mut lines, "n")?, "n")?;
        let seed = match field(&mut lines, "seed")? {
            (_, "-") => None,
            f => Some(parse::<u64>(f, "seed")?),
        };
        let converged: bool = parse(field(&mut lines, "converged")?, "converged")?;
        let iterations: usize = parse(field(&mut lines, "iterations")?, "iterations")?;
        let mode = match field(&mut lines, "mode")? {
            (_, "-") => None,
            (_, "joint") => Some(FitMode::Joint),
            (_, "independent") => Some(FitMode::Independent),
            (i, other) => return Err(bad(i, "mode", format!("unknown mode `{other}`"))),
        };
        let width = match kind {
            RecalKind::Platt | RecalKind::ActionwisePlatt => 2,
            _ => 1,
        };
        let expected_rows = match kind {
            RecalKind::Platt | RecalKind::Temperature => 1,
            _ => dims,
        };
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(expected_rows);
        for (i, l) in lines {
            let rest = l.trim().strip_prefix("param ").ok_or_else(|| bad(i, "param", "expected `param`".into()))?;
            let mut parts = rest.split_whitespace();
            let index: usize = parse((i, parts.next().unwrap_or("")), "param.index")?;
            if index != rows.len() {
                return Err(bad(i, "param.index", format!("expected index {}, found {index}", rows.len())));
            }
            let values = parts.map(|v| parse::<f64>((i, v), "param.value")).collect::<Result<Vec<_>>>()?;
            if values.len() != width {
                return Err(bad(i, "param", format!("expected {width} values, found {}", values.len())));
            }
            rows.push(values);
        }
        if rows.len() != expected_rows {
            return Err(Error::ShapeMismatch(format!("expected {expected_rows} param rows, found {}", rows.len())));
        }
        let params = match kind {
            RecalKind::Platt => RecalParams::Platt(PlattParams { alpha: rows[0][0], beta: rows[0][1] }),
            RecalKind::Temperature => RecalParams::Temperature(rows[0][0]),
            RecalKind::ActionwisePlatt => {
                RecalParams::ActionwisePlatt(rows.iter().map(|r| PlattParams { alpha: r[0], beta: r[1] }).collect())
            }
            RecalKind::ActionwiseTemperature => RecalParams::ActionwiseTemperature(rows.iter().map(|r| r[0]).collect()),
        };
        Recalibrator::new(params, FitMeta { n, seed, converged, iterations, mode })
    }
}
