//! Recorded request/response pairs for byte-reproducible runs.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{sha256_hex, CompletionRequest, CompletionResult, LlmBackend, LlmError};

/// One cassette line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub key: String,
    pub prompt: String,
    pub response: String,
    pub model: String,
    pub timestamp: u64,
}

/// Hash of `(model, prompt, max_tokens)`; editing a template changes the
/// prompt and therefore misses loudly on replay.
pub fn cassette_key(model: &str, prompt: &str, max_tokens: u32) -> String {
    let material = serde_json::to_string(&(model, prompt, max_tokens)).expect("tuple serializes");
    sha256_hex(material.as_bytes())
}

pub struct ReplayBackend {
    entries: HashMap<String, CassetteEntry>,
}

impl ReplayBackend {
    /// Later entries with the same key win.
    pub fn new(entries: impl IntoIterator<Item = CassetteEntry>) -> Self {
        ReplayBackend {
            entries: entries.into_iter().map(|e| (e.key.clone(), e)).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let entries: Vec<CassetteEntry> =
            crate::jsonl::read(path).map_err(|e| LlmError::Cassette(e.to_string()))?;
        Ok(ReplayBackend::new(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl LlmBackend for ReplayBackend {
    fn id(&self) -> String {
        "replay".to_string()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let start = Instant::now();
        let key = cassette_key(&req.model, &req.prompt, req.max_tokens);
        let entry = self
            .entries
            .get(&key)
            .ok_or(LlmError::CassetteMiss { key })?;
        Ok(CompletionResult {
            text: entry.response.clone(),
            backend: self.id(),
            latency_ms: start.elapsed().as_millis() as u64,
            payload_hash: sha256_hex(entry.response.as_bytes()),
            cache_hit: true,
        })
    }
}

/// Passes calls through to `inner` and appends every success to a cassette.
pub struct RecordingBackend {
    inner: Arc<dyn LlmBackend>,
    path: PathBuf,
    lock: Mutex<()>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn LlmBackend>, path: impl Into<PathBuf>) -> Self {
        RecordingBackend {
            inner,
            path: path.into(),
            lock: Mutex::new(()),
        }
    }
}

impl LlmBackend for RecordingBackend {
    fn id(&self) -> String {
        format!("record({})", self.inner.id())
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let result = self.inner.complete(req)?;
        let entry = CassetteEntry {
            key: cassette_key(&req.model, &req.prompt, req.max_tokens),
            prompt: req.prompt.clone(),
            response: result.text.clone(),
            model: req.model.clone(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let line = serde_json::to_string(&entry).map_err(|e| LlmError::Cassette(e.to_string()))?;
        let _guard = self.lock.lock().unwrap();
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| LlmError::Cassette(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| LlmError::Cassette(e.to_string()))?;
        Ok(result)
    }
}
