//! Result records and their JSON-lines / CSV encodings.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::BenchError;

/// One arm of one trial. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub problem: String,
    pub arm: String,
    pub trial: usize,
    pub seed: u64,
    pub mu0: f64,
    #[serde(rename = "T")]
    pub steps: usize,
    /// `None` when the trial failed; see `error`.
    pub final_objective: Option<f64>,
    /// Objective over the mean of the k-means++ arm (k-means only).
    pub relative_error: Option<f64>,
    /// Registration only.
    pub success: Option<bool>,
    /// Registration rotation angle in radians.
    pub angle: Option<f64>,
    pub iterations: usize,
    pub wall_ms: f64,
    pub error: Option<String>,
}

/// One sampled quartic instance and its two-minimum analysis.
///
/// A `None` RE constant next to a present minimum means the constant is
/// infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarticRow {
    pub y1: f64,
    pub y2: f64,
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub energy1: Option<f64>,
    pub energy2: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub verdict: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    JsonLines,
    Csv,
}

/// Writes `rows` as JSON lines or as CSV with a header row.
pub fn emit_results<T: Serialize, W: Write>(
    rows: &[T],
    format: Format,
    mut out: W,
) -> Result<(), BenchError> {
    if rows.is_empty() {
        return Err(BenchError::Config("no results to emit".into()));
    }
    match format {
        Format::JsonLines => {
            for row in rows {
                serde_json::to_writer(&mut out, row)?;
                out.write_all(b"\n")?;
            }
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            for row in rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn parse_json_lines<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, BenchError> {
    let mut rows = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            rows.push(serde_json::from_str(&line)?);
        }
    }
    Ok(rows)
}

pub fn parse_csv<T: DeserializeOwned, R: std::io::Read>(reader: R) -> Result<Vec<T>, BenchError> {
    let mut r = csv::Reader::from_reader(reader);
    let rows = r.deserialize().collect::<Result<Vec<T>, _>>()?;
    Ok(rows)
}

/// Mean/min/max of one arm (per angle for registration), mirroring the
/// layout of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub problem: String,
    pub arm: String,
    pub angle: Option<f64>,
    pub trials: usize,
    pub failures: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub mean_relative: Option<f64>,
    pub min_relative: Option<f64>,
    pub max_relative: Option<f64>,
    pub successes: Option<usize>,
    pub mean_wall_ms: f64,
}

fn stats(values: impl Iterator<Item = f64>) -> Option<(f64, f64, f64)> {
    let (mut n, mut sum, mut lo, mut hi) = (0usize, 0.0, f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        n += 1;
        sum += v;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (n > 0).then(|| (sum / n as f64, lo, hi))
}

/// Groups reports by `(arm, angle)` in first-seen order.
pub fn summarize(reports: &[TrialReport]) -> Vec<ArmSummary> {
    let mut keys: Vec<(String, String, Option<f64>)> = Vec::new();
    for r in reports {
        let key = (r.problem.clone(), r.arm.clone(), r.angle);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(problem, arm, angle)| {
            let group: Vec<&TrialReport> = reports
                .iter()
                .filter(|r| r.problem == problem && r.arm == arm && r.angle == angle)
                .collect();
            let ok: Vec<&&TrialReport> = group
                .iter()
                .filter(|r| r.final_objective.is_some())
                .collect();
            let (mean, min, max) = stats(ok.iter().filter_map(|r| r.final_objective)).unwrap_or((
                f64::NAN,
                f64::NAN,
                f64::NAN,
            ));
            let rel = stats(ok.iter().filter_map(|r| r.relative_error));
            let successes = group
                .iter()
                .any(|r| r.success.is_some())
                .then(|| group.iter().filter(|r| r.success == Some(true)).count());
            ArmSummary {
                problem,
                arm,
                angle,
                trials: group.len(),
                failures: group.len() - ok.len(),
                mean,
                min,
                max,
                mean_relative: rel.map(|s| s.0),
                min_relative: rel.map(|s| s.1),
                max_relative: rel.map(|s| s.2),
                successes,
                mean_wall_ms: group.iter().map(|r| r.wall_ms).sum::<f64>() / group.len() as f64,
            }
        })
        .collect()
}

/// Plain-text table of summaries.
pub fn format_summary(summaries: &[ArmSummary]) -> String {
    let mut s = format!(
        "{:<10} {:<10} {:>8} {:>6} {:>14} {:>14} {:>14} {:>22} {:>9} {:>10}\n",
        "problem",
        "arm",
        "angle",
        "trials",
        "mean",
        "min",
        "max",
        "rel mean/min/max",
        "success",
        "ms/trial"
    );
    for a in summaries {
        let rel = match (a.mean_relative, a.min_relative, a.max_relative) {
            (Some(m), Some(lo), Some(hi)) => format!("{m:.3}/{lo:.3}/{hi:.3}"),
            _ => "-".into(),
        };
        s.push_str(&format!(
            "{:<10} {:<10} {:>8} {:>6} {:>14.6} {:>14.6} {:>14.6} {:>22} {:>9} {:>10.1}\n",
            a.problem,
            a.arm,
            a.angle.map_or("-".into(), |v| format!("{v:.4}")),
            a.trials,
            a.mean,
            a.min,
            a.max,
            rel,
            a.successes
                .map_or("-".into(), |c| format!("{c}/{}", a.trials)),
            a.mean_wall_ms
        ));
    }
    s
}
