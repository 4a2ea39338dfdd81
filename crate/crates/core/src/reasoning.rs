//! The four-step reasoning schema used in library entries and generated
//! training targets: extract keywords, select tags, form conditional
//! expressions, combine.

use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STEP_LABELS: [&str; 4] = [
    "Extract keywords",
    "Select tags",
    "Form conditional expressions",
    "Combine",
];

static STEP_HEADER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)(?:\(\s*[1-4]\s*\)\s*|\b[1-4][.)]\s*)?\b(extract\s+keywords|select\s+tags|form\s+conditional\s+expressions|combine)\s*[:：]",
    )
    .unwrap()
});

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningSteps {
    pub keywords: String,
    pub tags: String,
    pub conditions: String,
    pub combined: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("reasoning is missing step `{0}`")]
    MissingStep(&'static str),
    #[error("step `{0}` appears out of order")]
    OutOfOrder(&'static str),
    #[error("step `{0}` is empty")]
    EmptyStep(&'static str),
}

fn label_index(matched: &str) -> usize {
    let norm = matched
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_ascii_lowercase();
    STEP_LABELS
        .iter()
        .position(|l| l.to_ascii_lowercase() == norm)
        .expect("regex only matches known labels")
}

/// Counts of each step header in `text`, in label order.
pub fn label_counts(text: &str) -> [usize; 4] {
    let mut counts = [0; 4];
    for cap in STEP_HEADER.captures_iter(text) {
        counts[label_index(&cap[1])] += 1;
    }
    counts
}

impl ReasoningSteps {
    /// Splits reasoning text on its step headers. Each step must appear,
    /// in order; the first occurrence of each header after the previous
    /// step is used.
    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let mut spans: [Option<(usize, usize)>; 4] = [None; 4];
        let mut next = 0;
        for cap in STEP_HEADER.captures_iter(text) {
            let idx = label_index(&cap[1]);
            let whole = cap.get(0).unwrap();
            if idx == next {
                spans[idx] = Some((whole.start(), whole.end()));
                next += 1;
                if next == 4 {
                    break;
                }
            } else if idx > next {
                return Err(SchemaError::OutOfOrder(STEP_LABELS[idx]));
            }
        }
        if next < 4 {
            return Err(SchemaError::MissingStep(STEP_LABELS[next]));
        }
        let spans = spans.map(Option::unwrap);
        let body = |i: usize| -> Result<String, SchemaError> {
            let end = if i + 1 < 4 {
                spans[i + 1].0
            } else {
                text.len()
            };
            let content = text[spans[i].1..end].trim().to_string();
            if content.is_empty() {
                return Err(SchemaError::EmptyStep(STEP_LABELS[i]));
            }
            Ok(content)
        };
        Ok(ReasoningSteps {
            keywords: body(0)?,
            tags: body(1)?,
            conditions: body(2)?,
            combined: body(3)?,
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "(1) {}: {}", STEP_LABELS[0], self.keywords);
        let _ = writeln!(out, "(2) {}: {}", STEP_LABELS[1], self.tags);
        let _ = writeln!(out, "(3) {}:\n{}", STEP_LABELS[2], self.conditions);
        let _ = write!(out, "(4) {}:\n{}", STEP_LABELS[3], self.combined);
        out
    }
}
