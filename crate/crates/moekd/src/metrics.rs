//! Metrics CSV (`step,metric,value`), JSON summaries and utilization tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use moekd_core::eval::MetricsReport;
use moekd_core::moe::UtilizationStats;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "step,metric,value";

pub fn csv(rows: &[(usize, String, f64)]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (step, metric, value) in rows {
        writeln!(out, "{step},{metric},{value}").unwrap();
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<(usize, String, f64)>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Config(format!("metrics CSV must start with {CSV_HEADER:?}")));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let mut f = l.splitn(3, ',');
            let (Some(s), Some(m), Some(v)) = (f.next(), f.next(), f.next()) else {
                return Err(Error::Config(format!("bad metrics row {l:?}")));
            };
            let step = s.parse().map_err(|_| Error::Config(format!("bad step in {l:?}")))?;
            let value = v.parse().map_err(|_| Error::Config(format!("bad value in {l:?}")))?;
            Ok((step, m.to_string(), value))
        })
        .collect()
}

/// `{metric: value}` from the evaluation rows of a report.
pub fn summary(report: &MetricsReport) -> BTreeMap<String, f64> {
    let evals = MetricsReport {
        steps: Vec::new(),
        evals: report.evals.clone(),
    };
    summary_from_rows(&evals.rows())
}

pub fn summary_from_rows(rows: &[(usize, String, f64)]) -> BTreeMap<String, f64> {
    rows.iter().map(|(_, m, v)| (m.clone(), *v)).collect()
}

pub fn summary_json(summary: &BTreeMap<String, f64>) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}

/// One `layer,expert,frequency` row per expert.
pub fn utilization_csv(stats: &[UtilizationStats]) -> String {
    let mut out = String::from("layer,expert,frequency\n");
    for (layer, s) in stats.iter().enumerate() {
        for (e, f) in s.frequencies.iter().enumerate() {
            writeln!(out, "{layer},{e},{f}").unwrap();
        }
    }
    out
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}
