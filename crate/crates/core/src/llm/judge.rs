use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use super::{Gateway, LlmError};
use crate::prompt::{build_judge_prompt, Demonstration, InstructionSet};

static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+").unwrap());

#[derive(Debug, Error, PartialEq)]
pub enum JudgeError {
    #[error("no integer score in reply `{0}`")]
    UnparseableScore(String),
    #[error("score {0} is outside 0..=10")]
    OutOfRange(i64),
    #[error(transparent)]
    Backend(#[from] LlmError),
}

/// First integer in the reply, checked against the 0..=10 scale.
pub fn parse_score(reply: &str) -> Result<u8, JudgeError> {
    let m = INTEGER
        .find(reply)
        .ok_or_else(|| JudgeError::UnparseableScore(reply.to_string()))?;
    let value: i64 = m
        .as_str()
        .parse()
        .map_err(|_| JudgeError::UnparseableScore(reply.to_string()))?;
    if (0..=10).contains(&value) {
        Ok(value as u8)
    } else {
        Err(JudgeError::OutOfRange(value))
    }
}

pub fn judge_score(
    demand: &str,
    prediction: &str,
    reference: &str,
    rubric: &[Demonstration],
    instructions: &InstructionSet,
    gateway: &Gateway,
) -> Result<u8, JudgeError> {
    let prompt = build_judge_prompt(demand, prediction, reference, rubric, instructions);
    let reply = gateway.complete_prompt(&prompt.rendered)?;
    parse_score(&reply.text)
}

/// Mean score over `(demand, prediction, reference)` triples; fails on the
/// first item that cannot be scored.
pub fn mean_judge_score(
    items: &[(String, String, String)],
    rubric: &[Demonstration],
    instructions: &InstructionSet,
    gateway: &Gateway,
) -> Result<f64, JudgeError> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0u64;
    for (d, p, r) in items {
        total += u64::from(judge_score(d, p, r, rubric, instructions, gateway)?);
    }
    Ok(total as f64 / items.len() as f64)
}
