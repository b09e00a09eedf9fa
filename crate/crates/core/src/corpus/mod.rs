//! Vulnerable/fixed function pairs and the corpus they form.
//!
//! Records come out of [`ingest_database`] and are persisted as JSON lines.
//! Everything downstream reads the JSON-lines corpus, never the database.

mod db;
mod tokens;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use db::{ingest_database, ingest_database_with_stats, IngestStats};
pub use tokens::{count_tokens, Tokenizer};

pub const DEFAULT_TOKEN_LIMIT: usize = 500;
pub const DEFAULT_LANGUAGE: &str = "C";
pub const DEFAULT_EXCLUDED_CWES: [&str; 2] = ["NVD-CWE-noinfo", "NVD-CWE-Other"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open database {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("schema mismatch in table `{table}`: {detail}")]
    Schema { table: String, detail: String },
    #[error("database query failed: {0}")]
    Sql(#[from] rusqlite::Error),
    #[error("unknown tokenizer `{0}`")]
    UnknownTokenizer(String),
    #[error("fraction {0} is outside the allowed range")]
    FractionOutOfRange(f64),
    #[error("invalid filter: {0}")]
    InvalidFilter(&'static str),
    #[error("{path}:{line}: {source}")]
    Json { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// The fixed ("after") code of a record.
///
/// Reads go through [`GroundTruth::reveal`], which counts them, so a run can
/// show that nothing before evaluation looked at the fix.
#[derive(Debug, Default)]
pub struct GroundTruth {
    code: String,
    reads: AtomicUsize,
}

impl GroundTruth {
    pub fn new(code: impl Into<String>) -> Self {
        Self { code: code.into(), reads: AtomicUsize::new(0) }
    }

    pub fn reveal(&self) -> &str {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.code
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }
}

impl Clone for GroundTruth {
    fn clone(&self) -> Self {
        Self { code: self.code.clone(), reads: AtomicUsize::new(self.reads()) }
    }
}

impl PartialEq for GroundTruth {
    fn eq(&self, other: &Self) -> bool {
        self.code == other.code
    }
}

impl Eq for GroundTruth {}

impl Serialize for GroundTruth {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.code)
    }
}

impl<'de> Deserialize<'de> for GroundTruth {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer).map(GroundTruth::new)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VulnRecord {
    pub cve_id: String,
    pub cwe_id: String,
    pub function_name: String,
    pub file_path: String,
    pub before_code: String,
    pub after_code: GroundTruth,
    pub cve_description: String,
    pub cwe_description: String,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordKey {
    pub cve_id: String,
    pub function_name: String,
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.cve_id, self.function_name)
    }
}

/// What the repair pipeline is allowed to see of a record: everything but
/// the fix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairTask {
    pub cve_id: String,
    pub cwe_id: String,
    pub function_name: String,
    pub file_path: String,
    pub before_code: String,
    pub cve_description: String,
    pub cwe_description: String,
    pub language: String,
}

impl RepairTask {
    pub fn key(&self) -> RecordKey {
        RecordKey { cve_id: self.cve_id.clone(), function_name: self.function_name.clone() }
    }
}

impl VulnRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey { cve_id: self.cve_id.clone(), function_name: self.function_name.clone() }
    }

    pub fn task(&self) -> RepairTask {
        RepairTask {
            cve_id: self.cve_id.clone(),
            cwe_id: self.cwe_id.clone(),
            function_name: self.function_name.clone(),
            file_path: self.file_path.clone(),
            before_code: self.before_code.clone(),
            cve_description: self.cve_description.clone(),
            cwe_description: self.cwe_description.clone(),
            language: self.language.clone(),
        }
    }

    /// The two change rows this record was paired from.
    pub fn to_change_rows(&self) -> [ChangeRow; 2] {
        let row = |before: bool, code: &str| ChangeRow {
            cve_id: self.cve_id.clone(),
            cwe_id: self.cwe_id.clone(),
            function_name: self.function_name.clone(),
            file_path: self.file_path.clone(),
            code: code.to_string(),
            before_change: before,
            cve_description: self.cve_description.clone(),
            cwe_description: self.cwe_description.clone(),
            language: self.language.clone(),
        };
        [row(true, &self.before_code), row(false, self.after_code.reveal())]
    }
}

/// One function version from a fixing commit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeRow {
    pub cve_id: String,
    pub cwe_id: String,
    pub function_name: String,
    pub file_path: String,
    pub code: String,
    pub before_change: bool,
    pub cve_description: String,
    pub cwe_description: String,
    pub language: String,
}

/// Keeps the (cve_id, function_name) groups made of exactly one "before" and
/// one "after" row. Output is sorted by key.
pub fn pair_candidates(rows: Vec<ChangeRow>) -> Vec<VulnRecord> {
    let mut groups: BTreeMap<(String, String), Vec<ChangeRow>> = BTreeMap::new();
    for row in rows {
        groups.entry((row.cve_id.clone(), row.function_name.clone())).or_default().push(row);
    }

    groups
        .into_values()
        .filter_map(|mut group| {
            if group.len() != 2 || group[0].before_change == group[1].before_change {
                return None;
            }
            if !group[0].before_change {
                group.swap(0, 1);
            }
            let mut rows = group.into_iter();
            let before = rows.next()?;
            let after = rows.next()?;
            Some(VulnRecord {
                cve_id: before.cve_id,
                cwe_id: before.cwe_id,
                function_name: before.function_name,
                file_path: before.file_path,
                before_code: before.code,
                after_code: GroundTruth::new(after.code),
                cve_description: before.cve_description,
                cwe_description: before.cwe_description,
                language: before.language,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusFilter {
    pub target_language: String,
    pub token_limit: usize,
    pub excluded_cwes: BTreeSet<String>,
    pub min_pairs_per_cwe: usize,
    pub tokenizer: Tokenizer,
}

impl Default for CorpusFilter {
    fn default() -> Self {
        Self {
            target_language: DEFAULT_LANGUAGE.to_string(),
            token_limit: DEFAULT_TOKEN_LIMIT,
            excluded_cwes: DEFAULT_EXCLUDED_CWES.iter().map(|s| s.to_string()).collect(),
            min_pairs_per_cwe: 0,
            tokenizer: Tokenizer::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    Language(String),
    ExcludedCwe(String),
    EmptyCode,
    IdenticalCode,
    OverTokenLimit { snippet: &'static str, count: usize },
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::Language(l) => write!(f, "language {l}"),
            Rejection::ExcludedCwe(c) => write!(f, "excluded CWE {c}"),
            Rejection::EmptyCode => f.write_str("empty code"),
            Rejection::IdenticalCode => f.write_str("before and after are identical"),
            Rejection::OverTokenLimit { snippet, count } => {
                write!(f, "{snippet} snippet has {count} tokens")
            }
        }
    }
}

impl CorpusFilter {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.token_limit == 0 {
            return Err(CorpusError::InvalidFilter("token_limit must be positive"));
        }
        if self.target_language.trim().is_empty() {
            return Err(CorpusError::InvalidFilter("target_language must be set"));
        }
        Ok(())
    }

    /// Case-insensitive so that `NVD-CWE-other` and `NVD-CWE-Other` agree.
    pub fn is_excluded_cwe(&self, cwe_id: &str) -> bool {
        self.excluded_cwes.iter().any(|c| c.eq_ignore_ascii_case(cwe_id.trim()))
    }

    /// Checks every per-record predicate. The per-CWE minimum is a corpus
    /// level property and is applied by [`CorpusFilter::apply`].
    pub fn check(&self, record: &VulnRecord) -> Result<(), Rejection> {
        if !record.language.eq_ignore_ascii_case(&self.target_language) {
            return Err(Rejection::Language(record.language.clone()));
        }
        if self.is_excluded_cwe(&record.cwe_id) {
            return Err(Rejection::ExcludedCwe(record.cwe_id.clone()));
        }
        let after = record.after_code.reveal();
        if record.before_code.trim().is_empty() || after.trim().is_empty() {
            return Err(Rejection::EmptyCode);
        }
        if record.before_code == after {
            return Err(Rejection::IdenticalCode);
        }
        for (snippet, code) in [("before", record.before_code.as_str()), ("after", after)] {
            let count = self.tokenizer.count(code);
            if count > self.token_limit {
                return Err(Rejection::OverTokenLimit { snippet, count });
            }
        }
        Ok(())
    }

    /// Applies [`CorpusFilter::check`] and then drops CWEs with fewer than
    /// `min_pairs_per_cwe` surviving records.
    pub fn apply(&self, records: Vec<VulnRecord>) -> (Vec<VulnRecord>, Vec<(RecordKey, Rejection)>) {
        let mut rejected = Vec::new();
        let mut kept = Vec::new();
        for record in records {
            match self.check(&record) {
                Ok(()) => kept.push(record),
                Err(why) => rejected.push((record.key(), why)),
            }
        }
        if self.min_pairs_per_cwe > 0 {
            let mut per_cwe: HashMap<String, usize> = HashMap::new();
            for r in &kept {
                *per_cwe.entry(r.cwe_id.clone()).or_default() += 1;
            }
            kept.retain(|r| per_cwe[&r.cwe_id] >= self.min_pairs_per_cwe);
        }
        (kept, rejected)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<VulnRecord>,
    pub test: Vec<VulnRecord>,
    pub seed: u64,
    pub ratio: f64,
}

/// Seeded shuffle; `round(ratio * n)` records go to `train`. Both halves
/// keep the input order.
pub fn split_train_test(records: &[VulnRecord], ratio: f64, seed: u64) -> Result<CorpusSplit, CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::FractionOutOfRange(ratio));
    }
    let train_len = (ratio * records.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; records.len()];
    for &i in &order[..train_len] {
        in_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = records.iter().cloned().zip(in_train).partition(|(_, t)| *t);
    Ok(CorpusSplit {
        train: train.into_iter().map(|(r, _)| r).collect(),
        test: test.into_iter().map(|(r, _)| r).collect(),
        seed,
        ratio,
    })
}

/// Seeded sample of `round(fraction * n)` records in corpus order.
pub fn sample_fraction(records: &[VulnRecord], fraction: f64, seed: u64) -> Result<Vec<VulnRecord>, CorpusError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::FractionOutOfRange(fraction));
    }
    Ok(sample_indices(records.len(), fraction, seed).into_iter().map(|i| records[i].clone()).collect())
}

/// The ascending indices [`sample_fraction`] would keep.
pub fn sample_indices(len: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let keep = ((fraction * len as f64).round() as usize).min(len);
    if keep == len {
        return (0..len).collect();
    }
    let mut picked = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(seed), len, keep).into_vec();
    picked.sort_unstable();
    picked
}

/// CWE counts, most frequent first; ties by CWE id.
pub fn cwe_frequency(records: &[VulnRecord]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.cwe_id.as_str()).or_default() += 1;
    }
    let mut table: Vec<(String, usize)> = counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    table.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    table
}

pub fn write_corpus(path: &Path, records: &[VulnRecord]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn read_corpus(path: &Path) -> Result<Vec<VulnRecord>, CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|source| CorpusError::Json { path: path.to_path_buf(), line: i + 1, source })?;
        records.push(record);
    }
    Ok(records)
}

/// Sidecar describing how a corpus file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetadata {
    pub source_database: String,
    pub filter: CorpusFilter,
    pub record_count: usize,
    pub cwe_frequency: Vec<(String, usize)>,
}

pub fn metadata_path(corpus_path: &Path) -> PathBuf {
    let mut name = corpus_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    corpus_path.with_file_name(name)
}

pub fn write_metadata(corpus_path: &Path, meta: &CorpusMetadata) -> Result<PathBuf, CorpusError> {
    let path = metadata_path(corpus_path);
    let text = serde_json::to_string_pretty(meta).expect("metadata serializes");
    fs::write(&path, text + "\n").map_err(|source| CorpusError::Io { path: path.clone(), source })?;
    Ok(path)
}
