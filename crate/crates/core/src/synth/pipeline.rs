use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::catalog::TagCatalog;
use crate::llm::{CompletionResult, Gateway};
use crate::metrics::structure_accuracy;
use crate::prompt::{
    build_demand_generation_prompt, build_predict_prompt, build_reasoning_completion_prompt,
    Demonstration, InstructionSet, PromptBundle, PromptContext, PromptOptions,
};
use crate::reasoning::{ReasoningSteps, SchemaError};
use crate::retrieval::{ReasoningEntry, ReasoningLibrary};
use crate::sell::{self, validate, SellExpr, ValidationIssue};

/// Why a completion was not accepted as an answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectReason {
    Empty,
    Parse {
        code: String,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        position: Option<usize>,
    },
    Validation {
        issues: Vec<ValidationIssue>,
    },
}

impl RejectReason {
    pub fn code(&self) -> &str {
        match self {
            RejectReason::Empty => "EmptyCompletion",
            RejectReason::Parse { code, .. } => code,
            RejectReason::Validation { .. } => "ValidationFailed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnswerOutcome {
    Accepted(SellExpr),
    Rejected(RejectReason),
}

/// A review-queue line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub demand: String,
    pub completion: String,
    pub reason: RejectReason,
}

/// The SELL text inside a completion: the last `Answer:` line if there is
/// one, else the whole reply if it parses, else its last line opening with
/// `(`, else the trimmed reply.
pub fn extract_sell(raw: &str) -> String {
    let text = raw.trim().trim_matches('`').trim();
    if let Some(a) = text
        .lines()
        .filter_map(|l| l.trim().strip_prefix("Answer:"))
        .map(str::trim)
        .rfind(|a| !a.is_empty())
    {
        return a.to_string();
    }
    if sell::parse(text).is_ok() {
        return text.to_string();
    }
    text.lines()
        .map(str::trim)
        .rfind(|l| l.starts_with('('))
        .unwrap_or(text)
        .to_string()
}

/// Parses and validates a completion. Shared by the pipeline and by
/// anything re-checking its decisions.
pub fn check_answer(raw: &str, catalog: &TagCatalog) -> AnswerOutcome {
    let text = extract_sell(raw);
    if text.is_empty() {
        return AnswerOutcome::Rejected(RejectReason::Empty);
    }
    let expr = match sell::parse(&text) {
        Ok(e) => e,
        Err(e) => {
            return AnswerOutcome::Rejected(RejectReason::Parse {
                code: e.code().to_string(),
                message: e.to_string(),
                position: e.position(),
            })
        }
    };
    let report = validate(&expr, catalog);
    if report.ok {
        AnswerOutcome::Accepted(expr)
    } else {
        AnswerOutcome::Rejected(RejectReason::Validation {
            issues: report.issues,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedAnswer {
    pub prompt: PromptBundle,
    pub completion: CompletionResult,
    pub outcome: AnswerOutcome,
}

/// Demand to answer: prediction prompt, completion, parse and validate.
/// A bad completion is an `Ok` result with a rejected outcome so batches
/// can route it to the review queue.
pub fn generate_answer(
    demand: &str,
    ctx: &PromptContext<'_>,
    opts: &PromptOptions,
    catalog: &TagCatalog,
    gateway: &Gateway,
) -> Result<GeneratedAnswer, SynthError> {
    let prompt = build_predict_prompt(demand, ctx, opts)?;
    let completion = gateway.complete_prompt(&prompt.rendered)?;
    let outcome = check_answer(&completion.text, catalog);
    Ok(GeneratedAnswer {
        prompt,
        completion,
        outcome,
    })
}

fn by_structure<'a>(library: &'a ReasoningLibrary, answer: &SellExpr) -> Vec<&'a ReasoningEntry> {
    let gold = sell::print(answer);
    let mut scored: Vec<(f64, &ReasoningEntry)> = library
        .entries()
        .iter()
        .map(|e| (structure_accuracy(&e.sell, &gold).mean, e))
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.1.id.cmp(&b.1.id))
    });
    scored.into_iter().map(|(_, e)| e).collect()
}

/// The `m` library pairs whose answers are structurally closest to
/// `answer`, as (demand, answer) examples.
pub fn demand_examples(
    library: &ReasoningLibrary,
    answer: &SellExpr,
    m: usize,
) -> Vec<Demonstration> {
    by_structure(library, answer)
        .into_iter()
        .take(m)
        .map(|e| Demonstration {
            id: Some(e.id.clone()),
            demand: e.demand.clone(),
            sell: e.sell.clone(),
            ..Demonstration::default()
        })
        .collect()
}

/// Like [`demand_examples`] but keeps the reasoning, for step generation.
pub fn reasoning_seeds(
    library: &ReasoningLibrary,
    answer: &SellExpr,
    m: usize,
) -> Vec<Demonstration> {
    by_structure(library, answer)
        .into_iter()
        .take(m)
        .map(Demonstration::from_entry)
        .collect()
}

/// First non-empty paragraph, without a `Demand:` label or wrapping
/// quotes, whitespace collapsed.
pub fn clean_demand(raw: &str) -> String {
    let para = raw
        .split("\n\n")
        .map(str::trim)
        .find(|p| !p.is_empty())
        .unwrap_or("");
    let para = para.strip_prefix("Demand:").unwrap_or(para);
    let collapsed = para.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c| matches!(c, '"' | '\'' | '“' | '”' | '「' | '」'))
        .trim()
        .to_string()
}

#[derive(Debug, Clone)]
pub struct GeneratedDemand {
    pub demand: String,
    pub prompt: PromptBundle,
    pub completion: CompletionResult,
}

/// Answer to demand: ask for a demand matching a synthesized answer.
pub fn generate_demand(
    answer: &SellExpr,
    examples: &[Demonstration],
    instructions: &InstructionSet,
    gateway: &Gateway,
) -> Result<GeneratedDemand, SynthError> {
    let prompt = build_demand_generation_prompt(examples, answer, instructions);
    let completion = gateway.complete_prompt(&prompt.rendered)?;
    let demand = clean_demand(&completion.text);
    if demand.is_empty() {
        return Err(SynthError::EmptyCompletion);
    }
    Ok(GeneratedDemand {
        demand,
        prompt,
        completion,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReasoningRejection {
    Schema(SchemaError),
    Answer { expected: String, found: String },
}

impl From<ReasoningRejection> for SynthError {
    fn from(r: ReasoningRejection) -> Self {
        match r {
            ReasoningRejection::Schema(e) => SynthError::SchemaMismatch(e),
            ReasoningRejection::Answer { expected, found } => {
                SynthError::AnswerMismatch { expected, found }
            }
        }
    }
}

/// Accepts reasoning only if it has all four steps in order and its
/// combine step parses to `answer`. Line breaks inside the combine step
/// are read as spaces.
pub fn check_reasoning(
    text: &str,
    answer: &SellExpr,
) -> Result<ReasoningSteps, ReasoningRejection> {
    let steps = ReasoningSteps::parse(text).map_err(ReasoningRejection::Schema)?;
    let joined = steps
        .combined
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    let expected = sell::print(answer);
    match sell::parse(&joined) {
        Ok(e) if &e == answer => Ok(steps),
        Ok(e) => Err(ReasoningRejection::Answer {
            expected,
            found: sell::print(&e),
        }),
        Err(_) => Err(ReasoningRejection::Answer {
            expected,
            found: joined,
        }),
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedReasoning {
    pub reasoning: String,
    pub steps: ReasoningSteps,
    pub prompt: PromptBundle,
    pub completion: CompletionResult,
}

pub fn generate_reasoning(
    demand: &str,
    answer: &SellExpr,
    seeds: &[Demonstration],
    instructions: &InstructionSet,
    gateway: &Gateway,
) -> Result<GeneratedReasoning, SynthError> {
    let prompt = build_reasoning_completion_prompt(seeds, demand, answer, instructions);
    let completion = gateway.complete_prompt(&prompt.rendered)?;
    let reasoning = completion.text.trim().to_string();
    if reasoning.is_empty() {
        return Err(SynthError::EmptyCompletion);
    }
    let steps = check_reasoning(&reasoning, answer)?;
    Ok(GeneratedReasoning {
        reasoning,
        steps,
        prompt,
        completion,
    })
}
