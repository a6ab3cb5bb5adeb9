//! ErrorStats reports.
//!
//! CSV has one header row and one row per configuration, columns in the
//! field order of [`ErrorStats`]. JSON is an array of objects with the same
//! keys. Every float is rounded to 9 significant digits before writing.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::biaslab::ErrorStats;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::invalid(format!("unknown report format {s:?}"))),
        }
    }
}

/// Rounds to 9 significant decimal digits. Non-finite values pass through.
pub fn round_sig9(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.8e}").parse().expect("formatted float parses")
}

fn rounded(s: &ErrorStats) -> ErrorStats {
    ErrorStats {
        label: s.label.clone(),
        mean_abs_x: round_sig9(s.mean_abs_x),
        mean_abs_y: round_sig9(s.mean_abs_y),
        var_abs_x: round_sig9(s.var_abs_x),
        var_abs_y: round_sig9(s.var_abs_y),
        mean_abs_x_source: round_sig9(s.mean_abs_x_source),
        mean_abs_y_source: round_sig9(s.mean_abs_y_source),
        ..*s
    }
}

pub fn format_report(stats: &[ErrorStats], format: ReportFormat) -> Result<String> {
    let rows: Vec<ErrorStats> = stats.iter().map(rounded).collect();
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&rows)?;
            s.push('\n');
            Ok(s)
        }
    }
}

pub fn write_report(stats: &[ErrorStats], format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_report(stats, format)?)?;
    Ok(())
}

pub fn parse_report(text: &str, format: ReportFormat) -> Result<Vec<ErrorStats>> {
    match format {
        ReportFormat::Csv => csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .map(|r| r.map_err(Error::from))
            .collect(),
        ReportFormat::Json => Ok(serde_json::from_str(text)?),
    }
}

pub fn read_report(path: impl AsRef<Path>, format: ReportFormat) -> Result<Vec<ErrorStats>> {
    parse_report(&fs::read_to_string(path)?, format)
}
