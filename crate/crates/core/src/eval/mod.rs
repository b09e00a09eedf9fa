//! Scoring against the fixed code, aggregation and reports.
//!
//! This is the only stage that reads a record's fixed code.

mod apply;
mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{RecordKey, VulnRecord};
use crate::metric::{codebleu, MetricError, MetricWeights, SimilarityBreakdown};
use crate::pipeline::{ConfigLabel, RepairOutcome};

pub use apply::{apply_patch, apply_patch_to_file, locate_function, run_build_command, ApplyError, BuildStatus, FunctionSpan};
pub use report::{emit_report, parse_report_csv, ReportFormat};

pub const DEFAULT_PASS_K: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("outcome is for {outcome} but the record is {record}")]
    Mismatch { outcome: RecordKey, record: RecordKey },
    #[error("no corpus record for {0}")]
    MissingRecord(RecordKey),
    #[error("cannot aggregate zero rows")]
    EmptyRows,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("report: {0}")]
    Report(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub cve_id: String,
    pub cwe_id: String,
    pub function_name: String,
    pub model: String,
    pub config_label: ConfigLabel,
    pub similarity: SimilarityBreakdown,
    pub baseline_similarity: SimilarityBreakdown,
    pub pass_k: u32,
    /// The outcome had no candidate code; `similarity` is all zeros.
    pub patch_absent: bool,
}

/// Scores the final patch and the unrepaired code against the fix.
pub fn score_against_ground_truth(
    outcome: &RepairOutcome,
    record: &VulnRecord,
    weights: &MetricWeights,
) -> Result<EvaluationRow, EvalError> {
    if outcome.record != record.key() {
        return Err(EvalError::Mismatch { outcome: outcome.record.clone(), record: record.key() });
    }
    let fixed = record.after_code.reveal();
    let baseline_similarity = codebleu(&record.before_code, fixed, weights)?;
    let candidate = outcome.final_patch.code().filter(|c| !c.trim().is_empty());
    let similarity = match candidate {
        Some(code) => codebleu(code, fixed, weights)?,
        None => {
            weights.validate()?;
            SimilarityBreakdown::zero(*weights)
        }
    };
    Ok(EvaluationRow {
        cve_id: record.cve_id.clone(),
        cwe_id: record.cwe_id.clone(),
        function_name: record.function_name.clone(),
        model: outcome.model.clone(),
        config_label: outcome.config_label,
        similarity,
        baseline_similarity,
        pass_k: DEFAULT_PASS_K,
        patch_absent: candidate.is_none(),
    })
}

/// Scores each outcome against its corpus record, failing on the first
/// outcome with no record.
pub fn score_outcomes(
    outcomes: &[RepairOutcome],
    records: &[VulnRecord],
    weights: &MetricWeights,
) -> Result<Vec<EvaluationRow>, EvalError> {
    let by_key: BTreeMap<RecordKey, &VulnRecord> = records.iter().map(|r| (r.key(), r)).collect();
    outcomes
        .iter()
        .map(|o| {
            let record = by_key.get(&o.record).ok_or_else(|| EvalError::MissingRecord(o.record.clone()))?;
            score_against_ground_truth(o, record, weights)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Rows keyed by (model, config_label).
    ModelConfig,
    /// Rows keyed by (cwe_id, config_label).
    CweConfig,
}

impl Grouping {
    pub const ALL: [Grouping; 2] = [Grouping::ModelConfig, Grouping::CweConfig];

    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::ModelConfig => "model_config",
            Grouping::CweConfig => "cwe_config",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Grouping::ALL.into_iter().find(|g| g.as_str() == s)
    }

    fn key_of(self, row: &EvaluationRow) -> String {
        match self {
            Grouping::ModelConfig => row.model.clone(),
            Grouping::CweConfig => row.cwe_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub grouping: Grouping,
    /// Model name or CWE id, depending on `grouping`.
    pub key: String,
    pub config_label: ConfigLabel,
    pub count: usize,
    pub mean_similarity: f64,
    pub mean_baseline: f64,
    /// `(mean_similarity - mean_baseline) / mean_baseline`; absent when the
    /// baseline mean is zero.
    pub improvement: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub groups: Vec<GroupSummary>,
}

/// Means of the composite per group, for each requested grouping. Groups
/// are ordered by grouping, key, then configuration label.
pub fn aggregate(rows: &[EvaluationRow], groupings: &[Grouping]) -> Result<Report, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyRows);
    }
    let mut groups = Vec::new();
    let mut selected: Vec<Grouping> = groupings.to_vec();
    selected.sort();
    selected.dedup();
    for grouping in selected {
        let mut buckets: BTreeMap<(String, ConfigLabel), Vec<&EvaluationRow>> = BTreeMap::new();
        for row in rows {
            buckets.entry((grouping.key_of(row), row.config_label)).or_default().push(row);
        }
        for ((key, config_label), members) in buckets {
            let n = members.len() as f64;
            let mean_similarity = members.iter().map(|r| r.similarity.composite).sum::<f64>() / n;
            let mean_baseline = members.iter().map(|r| r.baseline_similarity.composite).sum::<f64>() / n;
            let improvement = (mean_baseline != 0.0).then(|| (mean_similarity - mean_baseline) / mean_baseline);
            groups.push(GroupSummary {
                grouping,
                key,
                config_label,
                count: members.len(),
                mean_similarity,
                mean_baseline,
                improvement,
            });
        }
    }
    Ok(Report { groups })
}
