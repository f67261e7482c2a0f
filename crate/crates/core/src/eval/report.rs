//! Metrics report files: pretty JSON with metadata, or one-row CSV.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, Metrics, BARNARD_VARIANT};

/// Column order of the CSV report.
pub const CSV_HEADER: [&str; 7] = [
    "dialogs",
    "successes",
    "success_rate",
    "avg_length_guided",
    "avg_length_free",
    "mode_f1",
    "degraded_rate",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// `.csv` means CSV; anything else JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    f1_positive_class: String,
    barnard_variant: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JsonReport {
    metadata: Metadata,
    metrics: Metrics,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    dialogs: usize,
    successes: usize,
    success_rate: f64,
    avg_length_guided: Option<f64>,
    avg_length_free: Option<f64>,
    mode_f1: f64,
    degraded_rate: f64,
}

pub fn write_report(metrics: &Metrics, path: &Path, format: ReportFormat) -> Result<(), EvalError> {
    let body = match format {
        ReportFormat::Json => {
            let report = JsonReport {
                metadata: Metadata {
                    format_version: 1,
                    f1_positive_class: "Free".into(),
                    barnard_variant: BARNARD_VARIANT.into(),
                },
                metrics: metrics.clone(),
            };
            let mut s = serde_json::to_string_pretty(&report).map_err(|e| EvalError::Format(e.to_string()))?;
            s.push('\n');
            s.into_bytes()
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.serialize(CsvRow {
                dialogs: metrics.dialogs,
                successes: metrics.successes,
                success_rate: metrics.success_rate,
                avg_length_guided: metrics.avg_length_guided,
                avg_length_free: metrics.avg_length_free,
                mode_f1: metrics.mode_f1,
                degraded_rate: metrics.degraded_rate,
            })
            .map_err(|e| EvalError::Format(e.to_string()))?;
            w.into_inner().map_err(|e| EvalError::Format(e.to_string()))?
        }
    };
    fs::write(path, body)?;
    Ok(())
}

/// Reads a report written by [`write_report`]; the format is sniffed from
/// the content.
pub fn read_report(path: &Path) -> Result<Metrics, EvalError> {
    let text = fs::read_to_string(path)?;
    if text.trim_start().starts_with('{') {
        let report: JsonReport = serde_json::from_str(&text).map_err(|e| EvalError::Format(e.to_string()))?;
        return Ok(report.metrics);
    }
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| EvalError::Format(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != CSV_HEADER {
        return Err(EvalError::Format(format!("unexpected CSV header {header:?}")));
    }
    let row: CsvRow = r
        .deserialize()
        .next()
        .ok_or_else(|| EvalError::Format("CSV report has no data row".into()))?
        .map_err(|e| EvalError::Format(e.to_string()))?;
    Ok(Metrics {
        dialogs: row.dialogs,
        successes: row.successes,
        success_rate: row.success_rate,
        avg_length_guided: row.avg_length_guided,
        avg_length_free: row.avg_length_free,
        mode_f1: row.mode_f1,
        degraded_rate: row.degraded_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics() -> Metrics {
        Metrics {
            dialogs: 500,
            successes: 421,
            success_rate: 84.2,
            avg_length_guided: Some(11.03),
            avg_length_free: None,
            mode_f1: 2.0 / 3.0,
            degraded_rate: 0.4,
        }
    }

    #[test]
    fn round_trips_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["r.json", "r.csv"] {
            let p = dir.path().join(name);
            write_report(&metrics(), &p, ReportFormat::from_path(&p)).unwrap();
            let first = fs::read(&p).unwrap();
            write_report(&metrics(), &p, ReportFormat::from_path(&p)).unwrap();
            assert_eq!(first, fs::read(&p).unwrap());
            assert_eq!(read_report(&p).unwrap(), metrics());
        }
        let csv = fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER.join(","));
    }

    #[test]
    fn rejects_foreign_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_report(&p), Err(EvalError::Format(_))));
    }
}
