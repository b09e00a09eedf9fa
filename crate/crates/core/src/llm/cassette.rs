//! Record and replay of chat exchanges.
//!
//! A cassette is a JSONL file of `{request_fingerprint, response_text}`
//! objects. Replay hands entries out strictly in order and rejects a
//! request whose fingerprint differs from the next entry.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, LlmError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CassetteEntry {
    pub request_fingerprint: String,
    pub response_text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cassette {
    pub entries: Vec<CassetteEntry>,
}

impl Cassette {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let err = |reason: String| LlmError::Cassette { path: path.display().to_string(), reason };
        let file = File::open(path).map_err(|e| err(e.to_string()))?;
        let mut entries = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", n + 1)))?);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        let err = |e: std::io::Error| LlmError::Cassette { path: path.display().to_string(), reason: e.to_string() };
        let mut out = File::create(path).map_err(err)?;
        for entry in &self.entries {
            writeln!(out, "{}", serde_json::to_string(entry).expect("entry serializes")).map_err(err)?;
        }
        out.flush().map_err(err)
    }
}

#[derive(Debug)]
pub struct ReplayBackend {
    state: Mutex<(Vec<CassetteEntry>, usize)>,
}

impl ReplayBackend {
    pub fn new(cassette: Cassette) -> Self {
        Self { state: Mutex::new((cassette.entries, 0)) }
    }

    pub fn from_path(path: &Path) -> Result<Self, LlmError> {
        Cassette::load(path).map(Self::new)
    }

    pub fn consumed(&self) -> usize {
        self.state.lock().expect("replay lock").1
    }

    pub fn remaining(&self) -> usize {
        let state = self.state.lock().expect("replay lock");
        state.0.len() - state.1
    }

    /// Moves past `n` entries without checking them, as when resuming a run
    /// whose earlier exchanges are already accounted for.
    pub fn skip(&self, n: usize) -> Result<(), LlmError> {
        let mut state = self.state.lock().expect("replay lock");
        if state.1 + n > state.0.len() {
            return Err(LlmError::ReplayExhausted { consumed: state.0.len() });
        }
        state.1 += n;
        Ok(())
    }
}

impl ChatBackend for ReplayBackend {
    fn send(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut state = self.state.lock().expect("replay lock");
        let (entries, next) = &mut *state;
        let Some(entry) = entries.get(*next) else {
            return Err(LlmError::ReplayExhausted { consumed: *next });
        };
        let actual = request.fingerprint();
        if entry.request_fingerprint != actual {
            return Err(LlmError::ReplayMismatch { index: *next, expected: entry.request_fingerprint.clone(), actual });
        }
        *next += 1;
        Ok(entry.response_text.clone())
    }
}

/// Forwards to `inner` and appends every successful exchange to a
/// cassette file, flushing after each entry.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    sink: Mutex<File>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    /// Truncates any existing file at `path`.
    pub fn create(inner: B, path: &Path) -> Result<Self, LlmError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|e| LlmError::Cassette { path: path.display().to_string(), reason: e.to_string() })?;
        Ok(Self { inner, path: path.to_path_buf(), sink: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn send(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let response_text = self.inner.send(request)?;
        let entry = CassetteEntry { request_fingerprint: request.fingerprint(), response_text };
        let line = serde_json::to_string(&entry).expect("entry serializes");
        let mut sink = self.sink.lock().expect("recorder lock");
        writeln!(sink, "{line}")
            .and_then(|_| sink.flush())
            .map_err(|e| LlmError::Cassette { path: self.path.display().to_string(), reason: e.to_string() })?;
        Ok(entry.response_text)
    }
}
