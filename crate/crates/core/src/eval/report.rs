//! Report serialization as JSON, CSV or a markdown table.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EvalError, GroupSummary, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(EvalError::Report(format!("unknown format {other}; expected json, csv or markdown"))),
        }
    }
}

const COLUMNS: [&str; 7] = ["grouping", "key", "config_label", "count", "mean_similarity", "mean_baseline", "improvement"];

/// Renders `report` with groups in ascending key order. JSON and CSV keep
/// full float precision; markdown rounds to four decimals.
pub fn emit_report(report: &Report, format: ReportFormat) -> Result<String, EvalError> {
    let mut groups: Vec<&GroupSummary> = report.groups.iter().collect();
    groups.sort_by(|a, b| (a.grouping, &a.key, a.config_label).cmp(&(b.grouping, &b.key, b.config_label)));
    match format {
        ReportFormat::Json => {
            let sorted = Report { groups: groups.into_iter().cloned().collect() };
            let mut text = serde_json::to_string_pretty(&sorted).map_err(|e| EvalError::Report(e.to_string()))?;
            text.push('\n');
            Ok(text)
        }
        ReportFormat::Csv => {
            let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            let err = |e: csv::Error| EvalError::Report(e.to_string());
            writer.write_record(COLUMNS).map_err(err)?;
            for g in groups {
                writer.serialize(g).map_err(err)?;
            }
            let bytes = writer.into_inner().map_err(|e| EvalError::Report(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| EvalError::Report(e.to_string()))
        }
        ReportFormat::Markdown => {
            let mut out = String::new();
            out.push_str("| grouping | key | config | n | mean similarity | mean baseline | improvement |\n");
            out.push_str("|---|---|---|---:|---:|---:|---:|\n");
            for g in groups {
                let improvement = g.improvement.map_or_else(|| "n/a".to_string(), |v| format!("{:+.2}%", v * 100.0));
                writeln!(
                    out,
                    "| {} | {} | {} | {} | {:.4} | {:.4} | {} |",
                    g.grouping.as_str(),
                    g.key,
                    g.config_label,
                    g.count,
                    g.mean_similarity,
                    g.mean_baseline,
                    improvement
                )
                .expect("writing to a String");
            }
            Ok(out)
        }
    }
}

/// Reads back the CSV form of a report.
pub fn parse_report_csv(text: &str) -> Result<Report, EvalError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| EvalError::Report(e.to_string()))?.clone();
    if headers.iter().ne(COLUMNS) {
        return Err(EvalError::Report(format!("unexpected CSV header {:?}", headers)));
    }
    let groups = reader
        .deserialize()
        .collect::<Result<Vec<GroupSummary>, _>>()
        .map_err(|e| EvalError::Report(e.to_string()))?;
    Ok(Report { groups })
}
