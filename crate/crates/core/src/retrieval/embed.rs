//! Text embedders behind a common trait.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> EmbeddingVector {
        EmbeddingVector(self.0.iter().map(|x| x * alpha).collect())
    }
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero vector")]
    ZeroVector,
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("no precomputed embedding for `{0}`")]
    Missing(String),
    #[error("embedding service: {0}")]
    Remote(String),
    #[error("{0}")]
    Io(#[from] crate::jsonl::JsonlError),
}

/// Cosine similarity `a·b / (|a||b|)`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimMismatch(a.dim(), b.dim()));
    }
    let mut dot = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (x, y) in a.0.iter().zip(&b.0) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok(dot / (aa.sqrt() * bb.sqrt()))
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    /// Backend and model identifier; vectors from different versions are
    /// not comparable.
    fn version(&self) -> String;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Offline embedder: signed feature hashing of character 1–3-grams.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(256, 0)
    }
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim, seed }
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // Final avalanche so low bits depend on every input byte.
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let norm: String = text
            .nfc()
            .collect::<String>()
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        if norm.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let chars: Vec<char> = norm.chars().collect();
        let mut v = vec![0.0; self.dim];
        let mut buf = String::new();
        for n in 1..=3usize {
            for w in chars.windows(n) {
                buf.clear();
                buf.extend(w);
                let h = fnv1a(self.seed ^ n as u64, buf.as_bytes());
                let idx = (h % self.dim as u64) as usize;
                let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                v[idx] += sign * n as f64;
            }
        }
        if v.iter().all(|x| *x == 0.0) {
            return Err(EmbedError::ZeroVector);
        }
        Ok(EmbeddingVector(v))
    }

    fn version(&self) -> String {
        format!("hash-ngram-v1/dim={}/seed={}", self.dim, self.seed)
    }
}

#[derive(Debug, Deserialize)]
struct PrecomputedLine {
    text: String,
    embedding: EmbeddingVector,
}

/// Lookup table loaded from JSON Lines `{text, embedding}`.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbedder {
    table: HashMap<String, EmbeddingVector>,
    version: String,
}

impl PrecomputedEmbedder {
    pub fn new(
        entries: impl IntoIterator<Item = (String, EmbeddingVector)>,
        version: impl Into<String>,
    ) -> Self {
        PrecomputedEmbedder {
            table: entries.into_iter().collect(),
            version: version.into(),
        }
    }

    pub fn load(path: &Path, version: impl Into<String>) -> Result<Self, EmbedError> {
        let lines: Vec<PrecomputedLine> = crate::jsonl::read(path)?;
        Ok(PrecomputedEmbedder::new(
            lines.into_iter().map(|l| (l.text, l.embedding)),
            version,
        ))
    }
}

impl Embedder for PrecomputedEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        self.table
            .get(text)
            .or_else(|| self.table.get(text.trim()))
            .cloned()
            .ok_or_else(|| EmbedError::Missing(text.to_string()))
    }

    fn version(&self) -> String {
        format!("precomputed/{}", self.version)
    }
}

/// HTTP embedding service client.
///
/// Request: `POST {endpoint}` with `{"model": .., "input": [texts]}`.
/// Response: either `{"data": [{"embedding": [..]}, ..]}` or
/// `{"embeddings": [[..], ..]}`, one vector per input in order.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: EmbeddingVector,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbedResponse {
    Data { data: Vec<EmbedDatum> },
    Plain { embeddings: Vec<EmbeddingVector> },
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        out.pop()
            .ok_or_else(|| EmbedError::Remote("empty response".into()))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(EmbedRequest {
                model: &self.model,
                input: texts,
            })
            .map_err(|e| EmbedError::Remote(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(EmbedError::Remote(format!("HTTP {status}")));
        }
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Remote(e.to_string()))?;
        let vectors = match body {
            EmbedResponse::Data { data } => data.into_iter().map(|d| d.embedding).collect(),
            EmbedResponse::Plain { embeddings } => embeddings,
        };
        if vectors.len() != texts.len() {
            return Err(EmbedError::Remote(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                vectors.len()
            )));
        }
        Ok(vectors)
    }

    fn version(&self) -> String {
        format!("remote/{}", self.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        let v = EmbeddingVector(vec![1.0, 2.0, 3.0]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        let x = EmbeddingVector(vec![1.0, 0.0]);
        let y = EmbeddingVector(vec![0.0, 1.0]);
        assert_eq!(cosine(&x, &y).unwrap(), 0.0);
        assert!(matches!(cosine(&x, &v), Err(EmbedError::DimMismatch(2, 3))));
        let z = EmbeddingVector(vec![0.0, 0.0]);
        assert!(matches!(cosine(&x, &z), Err(EmbedError::ZeroVector)));
    }

    #[test]
    fn hash_embedder_is_deterministic_and_normalizing() {
        let e = HashEmbedder::default();
        let a = e.embed("Young people who like  Milk Tea").unwrap();
        assert_eq!(a, e.embed("young people who like milk tea").unwrap());
        assert_eq!(a.dim(), 256);
        assert!(matches!(e.embed("   "), Err(EmbedError::EmptyText)));
        let other = HashEmbedder::new(256, 9)
            .embed("young people who like milk tea")
            .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn hash_embedder_prefers_overlap() {
        let e = HashEmbedder::default();
        let q = e.embed("white-collar workers who drink coffee").unwrap();
        let near = e.embed("female white-collar workers").unwrap();
        let far = e.embed("retired farmers in rural areas").unwrap();
        assert!(cosine(&q, &near).unwrap() > cosine(&q, &far).unwrap());
    }

    #[test]
    fn precomputed_lookup() {
        let e = PrecomputedEmbedder::new(
            [("hello".to_string(), EmbeddingVector(vec![1.0, 0.0]))],
            "test",
        );
        assert_eq!(e.embed(" hello ").unwrap().0, vec![1.0, 0.0]);
        assert!(matches!(e.embed("nope"), Err(EmbedError::Missing(_))));
    }
}
