use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::{cosine, EmbedError, Embedder, EmbeddingVector};
use crate::catalog::{normalize_text, TagCatalog};
use crate::reasoning::{ReasoningSteps, SchemaError};
use crate::sell::{self, ValidationIssue};

/// Number of analogical demonstrations per prompt.
pub const DEFAULT_K: usize = 3;
/// Size of the retrieved tag list.
pub const DEFAULT_N: usize = 20;

/// Input row for [`build_library`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub demand: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub reasoning: String,
    pub sell: String,
}

/// One stored demonstration; also the library file line format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningEntry {
    pub id: String,
    pub demand: String,
    pub tags: Vec<String>,
    pub reasoning: String,
    pub sell: String,
    pub embedding: EmbeddingVector,
    pub embedder_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum RejectionReason {
    Parse(String),
    Invalid(Vec<ValidationIssue>),
    Reasoning(String),
    DuplicateDemand(String),
    DuplicateId,
    Embedding(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordRejection {
    pub index: usize,
    pub id: String,
    pub reason: RejectionReason,
}

#[derive(Debug, Error)]
pub enum LibraryBuildError {
    #[error("{} record(s) rejected", .0.len())]
    Rejected(Vec<RecordRejection>),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("library is empty")]
    EmptyLibrary,
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("k and n must be at least 1")]
    ZeroCount,
    #[error("entry `{id}` has dimension {got}, store has {want}")]
    DimMismatch { id: String, got: usize, want: usize },
    #[error("entry `{id}` was embedded by `{got}`, store uses `{want}`")]
    VersionMismatch {
        id: String,
        got: String,
        want: String,
    },
    #[error("duplicate entry id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Jsonl(#[from] crate::jsonl::JsonlError),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReasoningLibrary {
    entries: Vec<ReasoningEntry>,
}

impl ReasoningLibrary {
    /// Checks shared dimension, shared embedder version and unique ids.
    pub fn from_entries(entries: Vec<ReasoningEntry>) -> Result<Self, StoreError> {
        let mut ids = HashSet::new();
        if let Some(first) = entries.first() {
            let (dim, version) = (first.embedding.dim(), first.embedder_version.clone());
            for e in &entries {
                if e.embedding.dim() != dim {
                    return Err(StoreError::DimMismatch {
                        id: e.id.clone(),
                        got: e.embedding.dim(),
                        want: dim,
                    });
                }
                if e.embedder_version != version {
                    return Err(StoreError::VersionMismatch {
                        id: e.id.clone(),
                        got: e.embedder_version.clone(),
                        want: version.clone(),
                    });
                }
                if e.embedding.norm() == 0.0 {
                    return Err(StoreError::Embed(EmbedError::ZeroVector));
                }
                if !ids.insert(e.id.clone()) {
                    return Err(StoreError::DuplicateId(e.id.clone()));
                }
            }
        }
        Ok(ReasoningLibrary { entries })
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        ReasoningLibrary::from_entries(crate::jsonl::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        Ok(crate::jsonl::write(path, &self.entries)?)
    }

    pub fn to_jsonl(&self) -> String {
        crate::jsonl::to_string(&self.entries)
    }

    pub fn entries(&self) -> &[ReasoningEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&ReasoningEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.embedding.dim())
    }

    pub fn embedder_version(&self) -> Option<&str> {
        self.entries.first().map(|e| e.embedder_version.as_str())
    }

    /// The first `n` entries, for library-size sweeps.
    pub fn truncated(&self, n: usize) -> ReasoningLibrary {
        ReasoningLibrary {
            entries: self.entries.iter().take(n).cloned().collect(),
        }
    }
}

/// Parses, validates and embeds every record. Any rejection fails the whole
/// build and lists every offending record.
pub fn build_library(
    records: &[LibraryRecord],
    catalog: &TagCatalog,
    embedder: &dyn Embedder,
) -> Result<ReasoningLibrary, LibraryBuildError> {
    let mut rejections = Vec::new();
    let mut seen_demands = HashSet::new();
    let mut seen_ids = HashSet::new();
    let mut entries = Vec::with_capacity(records.len());
    let version = embedder.version();

    for (index, rec) in records.iter().enumerate() {
        let id = rec.id.clone().unwrap_or_else(|| format!("re-{index:04}"));
        let mut reject = |reason| {
            rejections.push(RecordRejection {
                index,
                id: id.clone(),
                reason,
            })
        };
        if !seen_ids.insert(id.clone()) {
            reject(RejectionReason::DuplicateId);
            continue;
        }
        let norm_demand = normalize_text(&rec.demand)
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase();
        if !seen_demands.insert(norm_demand) {
            reject(RejectionReason::DuplicateDemand(rec.demand.clone()));
            continue;
        }
        let expr = match sell::parse(&rec.sell) {
            Ok(e) => e,
            Err(e) => {
                reject(RejectionReason::Parse(e.to_string()));
                continue;
            }
        };
        let report = sell::validate(&expr, catalog);
        if !report.ok {
            reject(RejectionReason::Invalid(report.issues));
            continue;
        }
        if let Err(e) = check_reasoning(&rec.reasoning) {
            reject(RejectionReason::Reasoning(e.to_string()));
            continue;
        }
        match embedder.embed(&rec.demand) {
            Ok(embedding) => entries.push(ReasoningEntry {
                id,
                demand: rec.demand.trim().to_string(),
                tags: rec.tags.clone(),
                reasoning: rec.reasoning.trim().to_string(),
                sell: sell::print(&expr),
                embedding,
                embedder_version: version.clone(),
            }),
            Err(e) => reject(RejectionReason::Embedding(e.to_string())),
        }
    }

    if !rejections.is_empty() {
        return Err(LibraryBuildError::Rejected(rejections));
    }
    Ok(ReasoningLibrary::from_entries(entries).expect("entries built with one embedder"))
}

fn check_reasoning(text: &str) -> Result<(), SchemaError> {
    ReasoningSteps::parse(text).map(|_| ())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scored<T> {
    pub item: T,
    pub score: f64,
}

/// Sorts by descending score, ties by ascending key, and keeps `limit`.
pub fn rank<T, K: Ord>(
    mut scored: Vec<Scored<T>>,
    key: impl Fn(&T) -> K,
    limit: usize,
) -> Vec<Scored<T>> {
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| key(&a.item).cmp(&key(&b.item)))
    });
    scored.truncate(limit);
    scored
}

/// The `k` library entries most similar to `query` by embedding cosine.
pub fn top_k_demands<'a>(
    query: &str,
    k: usize,
    library: &'a ReasoningLibrary,
    embedder: &dyn Embedder,
) -> Result<Vec<Scored<&'a ReasoningEntry>>, StoreError> {
    if library.is_empty() {
        return Err(StoreError::EmptyLibrary);
    }
    if k == 0 {
        return Err(StoreError::ZeroCount);
    }
    let q = embedder.embed(query)?;
    let scored = library
        .entries
        .iter()
        .map(|e| {
            Ok(Scored {
                item: e,
                score: cosine(&q, &e.embedding)?,
            })
        })
        .collect::<Result<Vec<_>, EmbedError>>()?;
    Ok(rank(scored, |e| e.id.clone(), k))
}

/// Catalog tags embedded under `name: description`.
#[derive(Debug, Clone)]
pub struct TagIndex {
    entries: Vec<(String, EmbeddingVector)>,
    version: String,
}

impl TagIndex {
    pub fn build(catalog: &TagCatalog, embedder: &dyn Embedder) -> Result<Self, StoreError> {
        let texts: Vec<String> = catalog.tags().iter().map(|t| t.embedding_text()).collect();
        let vectors = embedder.embed_batch(&texts)?;
        Ok(TagIndex {
            entries: catalog
                .tags()
                .iter()
                .map(|t| t.name.clone())
                .zip(vectors)
                .collect(),
            version: embedder.version(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn embedder_version(&self) -> &str {
        &self.version
    }

    /// The `n` tags closest to `query`.
    pub fn search(
        &self,
        query: &str,
        n: usize,
        embedder: &dyn Embedder,
    ) -> Result<Vec<Scored<String>>, StoreError> {
        if self.entries.is_empty() {
            return Err(StoreError::EmptyCatalog);
        }
        if n == 0 {
            return Err(StoreError::ZeroCount);
        }
        let q = embedder.embed(query)?;
        let scored = self
            .entries
            .iter()
            .map(|(name, v)| {
                Ok(Scored {
                    item: name.clone(),
                    score: cosine(&q, v)?,
                })
            })
            .collect::<Result<Vec<_>, EmbedError>>()?;
        Ok(rank(scored, |name| name.clone(), n))
    }
}

/// One-shot tag retrieval; builds the index on the fly.
pub fn top_n_tags(
    query: &str,
    n: usize,
    catalog: &TagCatalog,
    embedder: &dyn Embedder,
) -> Result<Vec<Scored<String>>, StoreError> {
    if catalog.is_empty() {
        return Err(StoreError::EmptyCatalog);
    }
    TagIndex::build(catalog, embedder)?.search(query, n, embedder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{TagDef, ValueType};
    use crate::retrieval::HashEmbedder;

    const STEPS: &str = "(1) Extract keywords: women\n(2) Select tags: Gender\n(3) Form conditional expressions:\n(Gender#Belongs To#Female)\n(4) Combine:\n(Gender#Belongs To#Female)";

    fn catalog() -> TagCatalog {
        TagCatalog::new(vec![
            TagDef::new("Gender", ValueType::String).with_values(["Male", "Female"]),
            TagDef::new("Career", ValueType::String)
                .with_values(["White-collar", "Student"])
                .described("occupation such as white-collar worker or student"),
            TagDef::new("Pet Owning", ValueType::Boolean).described("owns a cat or dog"),
        ])
        .unwrap()
    }

    fn record(demand: &str, sell: &str) -> LibraryRecord {
        LibraryRecord {
            id: None,
            demand: demand.into(),
            tags: vec!["Gender".into()],
            reasoning: STEPS.into(),
            sell: sell.into(),
        }
    }

    #[test]
    fn builds_two_records() {
        let lib = build_library(
            &[
                record("Women", "(Gender#Belongs To#Female)"),
                record("Pet owners", "(Pet Owning#Belongs#true)"),
            ],
            &catalog(),
            &HashEmbedder::default(),
        )
        .unwrap();
        assert_eq!(lib.len(), 2);
        assert_eq!(lib.entries()[1].sell, "(Pet Owning#Belongs To#True)");
        assert_eq!(lib.entries()[1].id, "re-0001");
    }

    #[test]
    fn reports_every_rejection() {
        let err = build_library(
            &[
                record("Women", "(Gender#Belongs To#Robot)"),
                record("Men", "(Gender#Belongs To#Male"),
                record("  women ", "(Gender#Belongs To#Female)"),
                LibraryRecord {
                    reasoning: "just do it".into(),
                    ..record("Students", "(Career#Belongs To#Student)")
                },
            ],
            &catalog(),
            &HashEmbedder::default(),
        )
        .unwrap_err();
        let LibraryBuildError::Rejected(r) = err;
        assert_eq!(r.len(), 4);
        assert!(
            matches!(&r[0].reason, RejectionReason::Invalid(issues) if issues[0].path.is_empty())
        );
        assert!(matches!(r[1].reason, RejectionReason::Parse(_)));
        assert!(matches!(r[2].reason, RejectionReason::DuplicateDemand(_)));
        assert!(matches!(r[3].reason, RejectionReason::Reasoning(_)));
    }

    #[test]
    fn identical_query_ranks_first() {
        let e = HashEmbedder::default();
        let lib = build_library(
            &[
                record("Women", "(Gender#Belongs To#Female)"),
                record("Pet owners in big cities", "(Pet Owning#Belongs To#True)"),
                record("Students who own pets", "(Career#Belongs To#Student)"),
            ],
            &catalog(),
            &e,
        )
        .unwrap();
        let hits = top_k_demands("Pet owners in big cities", 2, &lib, &e).unwrap();
        assert_eq!(hits[0].item.id, "re-0001");
        assert!((hits[0].score - 1.0).abs() < 1e-9);
        assert_eq!(top_k_demands("x", 10, &lib, &e).unwrap().len(), 3);
        assert!(matches!(
            top_k_demands("x", 1, &ReasoningLibrary::default(), &e),
            Err(StoreError::EmptyLibrary)
        ));
    }

    #[test]
    fn tag_search() {
        let e = HashEmbedder::default();
        let hits = top_n_tags("Gender", 1, &catalog(), &e).unwrap();
        assert_eq!(hits[0].item, "Gender");
        let all = top_n_tags("white-collar workers", 10, &catalog(), &e).unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(all[0].item, "Career");
        let empty = TagCatalog::new(vec![]).unwrap();
        assert!(matches!(
            top_n_tags("x", 1, &empty, &e),
            Err(StoreError::EmptyCatalog)
        ));
    }

    #[test]
    fn ties_break_by_id() {
        let v = EmbeddingVector(vec![1.0, 0.0]);
        let scored = vec![
            Scored {
                item: "b",
                score: 0.5,
            },
            Scored {
                item: "a",
                score: 0.5,
            },
            Scored {
                item: "c",
                score: 0.9,
            },
        ];
        let ranked = rank(scored, |s| *s, 3);
        assert_eq!(
            ranked.iter().map(|s| s.item).collect::<Vec<_>>(),
            ["c", "a", "b"]
        );
        assert_eq!(v.dim(), 2);
    }

    #[test]
    fn save_load_round_trip() {
        let e = HashEmbedder::default();
        let recs = [
            record("Women", "(Gender#Belongs To#Female)"),
            record("Pet owners", "(Pet Owning#Belongs To#True)"),
        ];
        let lib = build_library(&recs, &catalog(), &e).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lib.jsonl");
        lib.save(&path).unwrap();
        assert_eq!(ReasoningLibrary::load(&path).unwrap(), lib);
        let again = build_library(&recs, &catalog(), &e).unwrap();
        assert_eq!(
            again.to_jsonl().as_bytes(),
            std::fs::read(&path).unwrap().as_slice()
        );
    }

    #[test]
    fn rejects_mixed_stores() {
        let mut a = build_library(
            &[record("Women", "(Gender#Belongs To#Female)")],
            &catalog(),
            &HashEmbedder::default(),
        )
        .unwrap()
        .entries()
        .to_vec();
        let mut b = a[0].clone();
        b.id = "other".into();
        b.embedding = EmbeddingVector(vec![1.0; 8]);
        a.push(b);
        assert!(matches!(
            ReasoningLibrary::from_entries(a),
            Err(StoreError::DimMismatch { .. })
        ));
    }
}
