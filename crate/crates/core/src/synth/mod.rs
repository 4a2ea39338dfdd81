//! Training-data synthesis: template-driven answers, the demand-to-answer
//! and answer-to-demand distillation pipelines, reasoning-step generation
//! and the training-corpus emitter.
//!
//! Every sample draws from its own rng stream (`seed`, sample index), so
//! batch results do not depend on thread count or scheduling.

mod corpus;
mod pipeline;
mod templates;

use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::TagCatalog;
use crate::llm::LlmError;
use crate::prompt::PromptError;
use crate::reasoning::SchemaError;
use crate::sell;

pub use corpus::{emit_corpus, reproduce_input, CorpusMode, CorpusRecord, RecordProvenance, Task};
pub use pipeline::{
    check_answer, check_reasoning, clean_demand, demand_examples, extract_sell, generate_answer,
    generate_demand, generate_reasoning, reasoning_seeds, AnswerOutcome, GeneratedAnswer,
    GeneratedDemand, GeneratedReasoning, ReasoningRejection, RejectReason, Rejection,
};
pub use templates::{sample_condition, synthesize_answer, LogicTemplate, PATTERNS};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("string tag `{0}` has no allowed values to sample from")]
    TagWithoutValues(String),
    #[error("numeric tag `{0}` has no sampling range")]
    TagWithoutRange(String),
    #[error("template weights: {0}")]
    BadWeights(String),
    #[error("completion is empty")]
    EmptyCompletion,
    #[error("reasoning does not follow the four-step schema: {0}")]
    SchemaMismatch(SchemaError),
    #[error("reasoning combines to `{found}`, expected `{expected}`")]
    AnswerMismatch { expected: String, found: String },
    #[error("sample `{0}` has no reasoning")]
    MissingReasoning(String),
    #[error("sample `{id}` has an invalid answer: {message}")]
    InvalidSample { id: String, message: String },
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("reading weights: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    DemandToAnswer,
    AnswerToDemand,
}

/// One (demand, answer, reasoning) training triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSample {
    pub id: String,
    pub demand: String,
    /// Canonical SELL.
    pub sell: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    pub source: Source,
    #[serde(default)]
    pub verified: bool,
}

/// A synthesized answer before any demand is written for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthAnswer {
    pub id: String,
    pub template: usize,
    pub sell: String,
}

/// The rng for sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Parses a JSON array of 19 non-negative template weights.
pub fn load_weights(path: &Path) -> Result<Vec<f64>, SynthError> {
    let text = std::fs::read_to_string(path)?;
    let weights: Vec<f64> =
        serde_json::from_str(&text).map_err(|e| SynthError::BadWeights(e.to_string()))?;
    check_weights(&weights)?;
    Ok(weights)
}

fn check_weights(weights: &[f64]) -> Result<WeightedIndex<f64>, SynthError> {
    if weights.len() != PATTERNS.len() {
        return Err(SynthError::BadWeights(format!(
            "expected {} weights, got {}",
            PATTERNS.len(),
            weights.len()
        )));
    }
    WeightedIndex::new(weights).map_err(|e| SynthError::BadWeights(e.to_string()))
}

/// `count` answers. Without weights, sample `i` uses template `i mod 19`,
/// so any multiple of 19 covers the templates exactly evenly; with weights
/// the template is drawn from the sample's own stream.
pub fn synthesize_answers(
    catalog: &TagCatalog,
    count: usize,
    seed: u64,
    weights: Option<&[f64]>,
) -> Result<Vec<SynthAnswer>, SynthError> {
    let dist = weights.map(check_weights).transpose()?;
    let all = LogicTemplate::all();
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let template = match &dist {
                Some(d) => &all[d.sample(&mut rng)],
                None => &all[i % all.len()],
            };
            let expr = synthesize_answer(template, catalog, &mut rng)?;
            Ok(SynthAnswer {
                id: format!("syn-{i:05}"),
                template: template.id,
                sell: sell::print(&expr),
            })
        })
        .collect()
}

/// Runs `f` over `items` on at most `threads` workers, keeping input order.
pub fn run_capped<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
}
