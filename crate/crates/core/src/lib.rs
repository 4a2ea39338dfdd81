//! Toolkit for translating marketer demands into SELL targeting expressions.
//!
//! The crate covers the SELL language itself ([`sell`]), its execution over a
//! user-tag database ([`targeting`]), embedding retrieval over a reasoning
//! library ([`retrieval`]), prompt assembly ([`prompt`]), the chat-completion
//! gateway ([`llm`]), training-data synthesis ([`synth`]) and evaluation
//! metrics ([`metrics`]). [`config`] wires them together from one TOML file.

pub mod catalog;
pub mod config;
pub mod jsonl;
pub mod llm;
pub mod metrics;
pub mod prompt;
pub mod reasoning;
pub mod retrieval;
pub mod sell;
pub mod synth;
pub mod targeting;

pub use catalog::{TagCatalog, TagDef, ValueType};
pub use sell::{parse, print, Operator, SellExpr, SellValue};
