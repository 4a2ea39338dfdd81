//! Evaluation: structure accuracy over logic skeletons and corpus BLEU.

mod benchmark;
mod bleu;
mod similarity;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use benchmark::{
    evaluate_benchmark, Aggregates, BenchRecord, BenchmarkItem, BenchmarkReport, ReportMetadata,
};
pub use bleu::{corpus_bleu, tokenize, BleuStats, MAX_ORDER, TOKENIZER_VERSION};
pub use similarity::{edit_distance, gestalt_matches, levenshtein_sim, ratcliff_obershelp};

use crate::sell;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{preds} predictions but {refs} references")]
    LengthMismatch { preds: usize, refs: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no prediction for test item `{0}`")]
    MissingPrediction(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("reference for `{id}` does not parse: {source}")]
    BadReference {
        id: String,
        source: sell::ParseError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureScore {
    pub l: f64,
    pub ro: f64,
    pub mean: f64,
}

impl StructureScore {
    pub fn new(l: f64, ro: f64) -> Self {
        StructureScore {
            l,
            ro,
            mean: (l + ro) / 2.0,
        }
    }
}

/// Skeleton of arbitrary text: the canonical skeleton when it parses,
/// otherwise the regex fallback. Returns whether it parsed.
pub fn skeleton_of(text: &str) -> (String, bool) {
    match sell::parse(text) {
        Ok(e) => (sell::extract_structure(&e), true),
        Err(_) => (sell::regex_skeleton(text), false),
    }
}

/// Compares logic skeletons of a prediction and its reference.
pub fn structure_accuracy(pred: &str, gold: &str) -> StructureScore {
    let (p, _) = skeleton_of(pred);
    let (g, _) = skeleton_of(gold);
    StructureScore::new(levenshtein_sim(&p, &g), ratcliff_obershelp(&p, &g))
}
