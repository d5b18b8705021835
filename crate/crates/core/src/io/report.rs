//! Training logs, cost reports and sweep tables.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{CostReport, SweepTable};
use crate::training::EpochLog;

pub const REPORT_VERSION: u32 = 1;
pub const SWEEP_MAGIC: &str = "# flocklab-sweep";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LogHeader<'a> {
    format: &'a str,
    version: u32,
    config_hash: &'a str,
}

/// Line-delimited JSON: a header record, then one record per epoch.
pub fn training_log_jsonl(log: &[EpochLog], config_hash: &str) -> String {
    let mut out = serde_json::to_string(&LogHeader {
        format: "flocklab-train-log",
        version: REPORT_VERSION,
        config_hash,
    })
    .expect("header serializes");
    out.push('\n');
    for e in log {
        out.push_str(&serde_json::to_string(e).expect("epoch serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_training_log(text: &str) -> Result<Vec<EpochLog>> {
    let err = |m: String| Error::Format {
        kind: "training log",
        message: m,
    };
    let mut lines = text.lines();
    let header: serde_json::Value = serde_json::from_str(lines.next().unwrap_or("")).map_err(|e| err(e.to_string()))?;
    let version = header.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != REPORT_VERSION {
        return Err(Error::Version {
            kind: "training log",
            found: version,
            expected: REPORT_VERSION,
        });
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| err(e.to_string())))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub reports: Vec<CostReport>,
}

impl ReportFile {
    pub fn new(reports: Vec<CostReport>, config_hash: &str) -> Self {
        ReportFile {
            format: "flocklab-report".into(),
            version: REPORT_VERSION,
            config_hash: config_hash.to_string(),
            reports,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        super::write_atomic(path, self.to_json().as_bytes())
    }
}

/// Sweep table as tab-separated text behind a versioned header.
pub fn sweep_tsv(table: &SweepTable, config_hash: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SWEEP_MAGIC} v{REPORT_VERSION}");
    let _ = writeln!(out, "# config_hash {config_hash}");
    out.push_str(&table.to_tsv());
    out
}

/// One parsed row of a sweep table.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSeries {
    pub axis: String,
    pub controller: String,
    pub config_hash: String,
    pub points: Vec<SweepPoint>,
}

pub fn parse_sweep_tsv(text: &str) -> Result<SweepSeries> {
    let err = |m: String| Error::Format {
        kind: "sweep table",
        message: m,
    };
    let mut lines = text.lines();
    let first = lines.next().unwrap_or("");
    let version: u32 = first
        .strip_prefix(SWEEP_MAGIC)
        .and_then(|r| r.trim().strip_prefix('v'))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| err("missing sweep header".into()))?;
    if version != REPORT_VERSION {
        return Err(Error::Version {
            kind: "sweep table",
            found: version,
            expected: REPORT_VERSION,
        });
    }
    let mut series = SweepSeries {
        axis: String::new(),
        controller: String::new(),
        config_hash: String::new(),
        points: Vec::new(),
    };
    for line in lines {
        if let Some(h) = line.strip_prefix("# config_hash ") {
            series.config_hash = h.to_string();
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 columns in {line:?}")));
        }
        if f[1] == "controller" {
            series.axis = f[0].to_string();
            continue;
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}")));
        series.controller = f[1].to_string();
        series.points.push(SweepPoint {
            value: num(f[0])?,
            median: num(f[2])?,
            q1: num(f[3])?,
            q3: num(f[4])?,
            success: f[5] == "true",
        });
    }
    if series.axis.is_empty() {
        return Err(err("missing column header".into()));
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{SweepAxis, SweepRow};

    #[test]
    fn log_round_trip() {
        let log = vec![
            EpochLog {
                epoch: 0,
                phase: 0,
                loss: 1.5,
                grad_norm: 0.25,
                wall_time: 0.1,
            },
            EpochLog {
                epoch: 1,
                phase: 1,
                loss: 0.75,
                grad_norm: 0.125,
                wall_time: 0.2,
            },
        ];
        let text = training_log_jsonl(&log, "abc");
        assert_eq!(text.lines().count(), 3);
        assert_eq!(parse_training_log(&text).unwrap(), log);
    }

    #[test]
    fn sweep_round_trip() {
        let table = SweepTable {
            axis: SweepAxis::Taps,
            controller: "dagnn".into(),
            rows: vec![
                SweepRow {
                    value: 2.0,
                    median: 2.5,
                    q1: 2.0,
                    q3: 3.5,
                    success: true,
                    reports: vec![],
                },
                SweepRow {
                    value: 3.0,
                    median: f64::INFINITY,
                    q1: 4.0,
                    q3: f64::INFINITY,
                    success: false,
                    reports: vec![],
                },
            ],
        };
        let s = parse_sweep_tsv(&sweep_tsv(&table, "h1")).unwrap();
        assert_eq!(s.axis, "taps");
        assert_eq!(s.controller, "dagnn");
        assert_eq!(s.config_hash, "h1");
        assert_eq!(s.points.len(), 2);
        assert_eq!(s.points[0].median, 2.5);
        assert!(s.points[1].median.is_infinite() && !s.points[1].success);
    }

    #[test]
    fn sweep_version_checked() {
        assert!(matches!(
            parse_sweep_tsv("# flocklab-sweep v9\n"),
            Err(Error::Version { found: 9, .. })
        ));
    }
}
