//! Append-only JSONL outcome file and the batch runner that fills it.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ConfigLabel, PipelineError, RepairEngine, RepairOutcome};
use crate::corpus::{RecordKey, RepairTask};

/// Identity of an outcome line; a resumed run skips keys already present.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OutcomeKey {
    pub record: RecordKey,
    pub model: String,
    pub config_label: ConfigLabel,
}

#[derive(Debug, Clone, Default)]
pub struct OutcomeLog {
    pub outcomes: Vec<RepairOutcome>,
    /// Byte length of the complete lines; anything after is a torn write.
    pub valid_len: u64,
    pub truncated_tail: bool,
}

fn outcome_error(path: &Path, reason: impl ToString) -> PipelineError {
    PipelineError::Outcomes { path: path.display().to_string(), reason: reason.to_string() }
}

/// Reads an outcome file. A final line without its newline, left by an
/// interrupted writer, is reported and ignored; a malformed complete line
/// is an error. A missing file reads as empty.
pub fn read_outcomes(path: &Path) -> Result<OutcomeLog, PipelineError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(OutcomeLog::default()),
        Err(e) => return Err(outcome_error(path, e)),
    };
    let mut reader = BufReader::new(file);
    let mut log = OutcomeLog::default();
    let mut line = String::new();
    let mut number = 0usize;
    loop {
        line.clear();
        let read = reader.read_line(&mut line).map_err(|e| outcome_error(path, e))?;
        if read == 0 {
            break;
        }
        number += 1;
        if !line.ends_with('\n') {
            log.truncated_tail = true;
            break;
        }
        if !line.trim().is_empty() {
            let outcome = serde_json::from_str(&line).map_err(|e| outcome_error(path, format!("line {number}: {e}")))?;
            log.outcomes.push(outcome);
        }
        log.valid_len += read as u64;
    }
    Ok(log)
}

pub struct OutcomeSink {
    path: PathBuf,
    file: Mutex<File>,
    existing: BTreeSet<OutcomeKey>,
}

impl OutcomeSink {
    /// Opens `path` for appending, dropping a torn final line first.
    pub fn open(path: &Path) -> Result<Self, PipelineError> {
        let log = read_outcomes(path)?;
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| outcome_error(path, e))?;
        if log.truncated_tail {
            tracing::warn!(path = %path.display(), "dropping incomplete last outcome line");
            file.set_len(log.valid_len).map_err(|e| outcome_error(path, e))?;
        }
        let existing = log.outcomes.iter().map(RepairOutcome::key).collect();
        Ok(Self { path: path.to_path_buf(), file: Mutex::new(file), existing })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn contains(&self, key: &OutcomeKey) -> bool {
        self.existing.contains(key)
    }

    /// Writes one outcome as a single line under the lock.
    pub fn append(&self, outcome: &RepairOutcome) -> Result<(), PipelineError> {
        let mut line = serde_json::to_string(outcome).map_err(|e| outcome_error(&self.path, e))?;
        line.push('\n');
        let mut file = self.file.lock().expect("sink lock");
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| outcome_error(&self.path, e))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BatchSummary {
    pub skipped: usize,
    pub completed: usize,
    pub failed: usize,
}

/// Repairs every task not yet in `sink`, up to `parallelism` at a time.
/// Each record's iterations stay sequential within its own session.
pub fn run_batch(
    engine: &RepairEngine<'_>,
    tasks: &[RepairTask],
    sink: &OutcomeSink,
    parallelism: usize,
) -> Result<BatchSummary, PipelineError> {
    let pending: Vec<&RepairTask> = tasks
        .iter()
        .filter(|t| {
            !sink.contains(&OutcomeKey { record: t.key(), model: engine.profile.name.clone(), config_label: engine.config.label })
        })
        .collect();
    let skipped = tasks.len() - pending.len();

    let run_one = |task: &&RepairTask| -> Result<bool, PipelineError> {
        let outcome = engine.run(task);
        if let Some(why) = &outcome.failure {
            tracing::warn!(record = %outcome.record, error = %why, "record failed");
        }
        sink.append(&outcome)?;
        Ok(outcome.failure.is_none())
    };

    let results: Vec<Result<bool, PipelineError>> = if parallelism <= 1 {
        pending.iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| outcome_error(sink.path(), e))?;
        pool.install(|| pending.par_iter().map(run_one).collect())
    };

    let mut summary = BatchSummary { skipped, ..Default::default() };
    for r in results {
        if r? {
            summary.completed += 1;
        } else {
            summary.failed += 1;
        }
    }
    Ok(summary)
}
