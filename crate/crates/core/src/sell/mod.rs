//! The SELL targeting language: conditions `(key#operator#value)` composed
//! with n-ary `AND` / `OR` groups.
//!
//! Every constructor and the parser produce canonical trees: same-operator
//! chains are flattened and groups always hold at least two children.

mod card;
mod parse;
mod print;
mod validate;

use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use card::{from_card, to_card, CardError, CardNode, NodeKind};
pub use parse::{parse, parse_with, ParseError, ParseOptions};
pub use print::{extract_structure, extract_structure_str, print, regex_skeleton};
pub use validate::{validate, IssueCode, ValidationIssue, ValidationReport};

/// The nine comparison operators. The first seven apply to numeric tags,
/// the last two to string and boolean tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operator {
    EqualTo,
    GreaterThan,
    LessThan,
    NotEqualTo,
    NotGreaterThan,
    NotLessThan,
    Between,
    BelongsTo,
    NotBelongsTo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorClass {
    Numeric,
    Set,
}

impl Operator {
    pub const ALL: [Operator; 9] = [
        Operator::EqualTo,
        Operator::GreaterThan,
        Operator::LessThan,
        Operator::NotEqualTo,
        Operator::NotGreaterThan,
        Operator::NotLessThan,
        Operator::Between,
        Operator::BelongsTo,
        Operator::NotBelongsTo,
    ];

    pub const NUMERIC: [Operator; 7] = [
        Operator::EqualTo,
        Operator::GreaterThan,
        Operator::LessThan,
        Operator::NotEqualTo,
        Operator::NotGreaterThan,
        Operator::NotLessThan,
        Operator::Between,
    ];

    pub const SET: [Operator; 2] = [Operator::BelongsTo, Operator::NotBelongsTo];

    /// Canonical surface string.
    pub fn as_str(self) -> &'static str {
        match self {
            Operator::EqualTo => "Equal To",
            Operator::GreaterThan => "Greater Than",
            Operator::LessThan => "Less Than",
            Operator::NotEqualTo => "Not Equal To",
            Operator::NotGreaterThan => "Not Greater Than",
            Operator::NotLessThan => "Not Less Than",
            Operator::Between => "Between",
            Operator::BelongsTo => "Belongs To",
            Operator::NotBelongsTo => "Not Belongs To",
        }
    }

    pub fn class(self) -> OperatorClass {
        match self {
            Operator::BelongsTo | Operator::NotBelongsTo => OperatorClass::Set,
            _ => OperatorClass::Numeric,
        }
    }

    /// Exact canonical lookup; aliases are handled by [`ParseOptions`].
    pub fn from_canonical(s: &str) -> Option<Operator> {
        Operator::ALL.into_iter().find(|op| op.as_str() == s)
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Operator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Operator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        ParseOptions::default()
            .resolve_operator(&raw)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown operator `{raw}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Combinator {
    #[serde(rename = "AND")]
    And,
    #[serde(rename = "OR")]
    Or,
}

impl Combinator {
    pub fn as_str(self) -> &'static str {
        match self {
            Combinator::And => "AND",
            Combinator::Or => "OR",
        }
    }
}

/// Right-hand side of a condition.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SellValue {
    Number(Decimal),
    NumberPair(Decimal, Decimal),
    Text(String),
    Bool(bool),
}

impl SellValue {
    /// Interprets raw value text for the given operator. Numeric operators
    /// require decimals (`lo,hi` for `Between`); set operators map
    /// `True`/`False` (any case) to booleans and keep everything else as text.
    pub fn from_surface(op: Operator, raw: &str) -> Result<SellValue, ValueError> {
        let raw = raw.trim();
        if raw.is_empty() {
            return Err(ValueError::Empty);
        }
        if let Some(c) = raw.chars().find(|c| matches!(c, '#' | '(' | ')')) {
            return Err(ValueError::ReservedChar(c));
        }
        match op {
            Operator::Between => {
                let (lo, hi) = raw
                    .split_once(',')
                    .ok_or_else(|| ValueError::MalformedBetween(raw.to_string()))?;
                let lo = parse_decimal(lo)
                    .ok_or_else(|| ValueError::MalformedBetween(raw.to_string()))?;
                let hi = parse_decimal(hi)
                    .ok_or_else(|| ValueError::MalformedBetween(raw.to_string()))?;
                Ok(SellValue::NumberPair(lo, hi))
            }
            op if op.class() == OperatorClass::Numeric => parse_decimal(raw)
                .map(SellValue::Number)
                .ok_or_else(|| ValueError::MalformedNumber(raw.to_string())),
            _ => {
                if raw.eq_ignore_ascii_case("true") {
                    Ok(SellValue::Bool(true))
                } else if raw.eq_ignore_ascii_case("false") {
                    Ok(SellValue::Bool(false))
                } else {
                    Ok(SellValue::Text(raw.to_string()))
                }
            }
        }
    }

    /// Textual view used for string comparisons.
    pub fn text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for SellValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SellValue::Number(n) => write!(f, "{n}"),
            SellValue::NumberPair(lo, hi) => write!(f, "{lo},{hi}"),
            SellValue::Text(t) => f.write_str(t),
            SellValue::Bool(true) => f.write_str("True"),
            SellValue::Bool(false) => f.write_str("False"),
        }
    }
}

fn parse_decimal(s: &str) -> Option<Decimal> {
    let s = s.trim();
    let body = s.strip_prefix(['-', '+']).unwrap_or(s);
    // Plain integer or decimal-point literal only; no exponents.
    let mut parts = body.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let frac = parts.next();
    let digits_ok = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
    if !digits_ok(int) || frac.is_some_and(|f| !digits_ok(f)) {
        return None;
    }
    Decimal::from_str(s).ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValueError {
    #[error("value is empty")]
    Empty,
    #[error("value contains reserved character `{0}`")]
    ReservedChar(char),
    #[error("`{0}` is not a decimal number")]
    MalformedNumber(String),
    #[error("Between value must be `lo,hi` with two decimals, got `{0}`")]
    MalformedBetween(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Condition {
    pub key: String,
    pub operator: Operator,
    pub value: SellValue,
}

impl Condition {
    pub fn new(key: impl Into<String>, operator: Operator, value: SellValue) -> Self {
        Condition {
            key: key.into(),
            operator,
            value,
        }
    }

    /// Builds a condition from surface strings, applying the default
    /// operator aliases.
    pub fn from_parts(key: &str, operator: &str, value: &str) -> Result<Self, ConditionError> {
        let key = key.trim();
        if key.is_empty() {
            return Err(ConditionError::EmptyKey);
        }
        if let Some(c) = key.chars().find(|c| matches!(c, '#' | '(' | ')')) {
            return Err(ConditionError::Value(ValueError::ReservedChar(c)));
        }
        let op = ParseOptions::default()
            .resolve_operator(operator)
            .ok_or_else(|| ConditionError::UnknownOperator(operator.trim().to_string()))?;
        let value = SellValue::from_surface(op, value)?;
        Ok(Condition::new(key, op, value))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConditionError {
    #[error("condition key is empty")]
    EmptyKey,
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error(transparent)]
    Value(#[from] ValueError),
}

/// A SELL expression tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SellExpr {
    Condition(Condition),
    And(Vec<SellExpr>),
    Or(Vec<SellExpr>),
}

impl SellExpr {
    pub fn cond(key: impl Into<String>, operator: Operator, value: SellValue) -> SellExpr {
        SellExpr::Condition(Condition::new(key, operator, value))
    }

    /// Canonical AND: flattens nested ANDs and collapses a single child.
    /// Panics on an empty child list.
    pub fn and(children: Vec<SellExpr>) -> SellExpr {
        SellExpr::group(Combinator::And, children)
    }

    pub fn or(children: Vec<SellExpr>) -> SellExpr {
        SellExpr::group(Combinator::Or, children)
    }

    pub fn group(comb: Combinator, children: Vec<SellExpr>) -> SellExpr {
        assert!(!children.is_empty(), "group needs at least one child");
        let mut flat = Vec::with_capacity(children.len());
        for child in children {
            match (comb, child) {
                (Combinator::And, SellExpr::And(grand)) | (Combinator::Or, SellExpr::Or(grand)) => {
                    flat.extend(grand)
                }
                (_, other) => flat.push(other),
            }
        }
        if flat.len() == 1 {
            return flat.pop().unwrap();
        }
        match comb {
            Combinator::And => SellExpr::And(flat),
            Combinator::Or => SellExpr::Or(flat),
        }
    }

    pub fn combinator(&self) -> Option<Combinator> {
        match self {
            SellExpr::Condition(_) => None,
            SellExpr::And(_) => Some(Combinator::And),
            SellExpr::Or(_) => Some(Combinator::Or),
        }
    }

    pub fn children(&self) -> &[SellExpr] {
        match self {
            SellExpr::Condition(_) => &[],
            SellExpr::And(c) | SellExpr::Or(c) => c,
        }
    }

    /// Rebuilds the tree bottom-up through the canonical constructors.
    pub fn canonicalize(self) -> SellExpr {
        match self {
            SellExpr::Condition(c) => SellExpr::Condition(c),
            SellExpr::And(c) => SellExpr::and(c.into_iter().map(SellExpr::canonicalize).collect()),
            SellExpr::Or(c) => SellExpr::or(c.into_iter().map(SellExpr::canonicalize).collect()),
        }
    }

    /// True when no group has fewer than two children or a same-operator child.
    pub fn is_canonical(&self) -> bool {
        match self {
            SellExpr::Condition(_) => true,
            SellExpr::And(c) | SellExpr::Or(c) => {
                c.len() >= 2
                    && c.iter().all(|child| {
                        child.combinator().is_none() || child.combinator() != self.combinator()
                    })
                    && c.iter().all(SellExpr::is_canonical)
            }
        }
    }

    /// Leaves in left-to-right order.
    pub fn conditions(&self) -> Vec<&Condition> {
        let mut out = Vec::new();
        self.walk_conditions(&mut |c| out.push(c));
        out
    }

    fn walk_conditions<'a>(&'a self, f: &mut impl FnMut(&'a Condition)) {
        match self {
            SellExpr::Condition(c) => f(c),
            SellExpr::And(children) | SellExpr::Or(children) => {
                for child in children {
                    child.walk_conditions(f);
                }
            }
        }
    }

    /// Replaces each leaf, in order, with the result of `f`. The output is
    /// re-canonicalized.
    pub fn map_conditions(&self, f: &mut impl FnMut(&Condition) -> SellExpr) -> SellExpr {
        match self {
            SellExpr::Condition(c) => f(c),
            SellExpr::And(children) => {
                SellExpr::and(children.iter().map(|c| c.map_conditions(f)).collect())
            }
            SellExpr::Or(children) => {
                SellExpr::or(children.iter().map(|c| c.map_conditions(f)).collect())
            }
        }
    }
}

impl fmt::Display for SellExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print(self))
    }
}

impl FromStr for SellExpr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

// JSON interchange: `{"op":"AND","children":[...]}` groups and
// `{"key":...,"operator":...,"value":...}` leaves, value in surface form.

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExprJson {
    Group {
        op: Combinator,
        children: Vec<ExprJson>,
    },
    Leaf {
        key: String,
        operator: String,
        value: String,
    },
}

impl From<&SellExpr> for ExprJson {
    fn from(e: &SellExpr) -> Self {
        match e {
            SellExpr::Condition(c) => ExprJson::Leaf {
                key: c.key.clone(),
                operator: c.operator.as_str().to_string(),
                value: c.value.to_string(),
            },
            SellExpr::And(ch) | SellExpr::Or(ch) => ExprJson::Group {
                op: e.combinator().unwrap(),
                children: ch.iter().map(ExprJson::from).collect(),
            },
        }
    }
}

impl TryFrom<ExprJson> for SellExpr {
    type Error = String;

    fn try_from(j: ExprJson) -> Result<Self, Self::Error> {
        match j {
            ExprJson::Leaf {
                key,
                operator,
                value,
            } => Condition::from_parts(&key, &operator, &value)
                .map(SellExpr::Condition)
                .map_err(|e| e.to_string()),
            ExprJson::Group { op, children } => {
                if children.is_empty() {
                    return Err("empty group".to_string());
                }
                let children = children
                    .into_iter()
                    .map(SellExpr::try_from)
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(SellExpr::group(op, children))
            }
        }
    }
}

impl Serialize for SellExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ExprJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for SellExpr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = ExprJson::deserialize(d)?;
        SellExpr::try_from(j).map_err(serde::de::Error::custom)
    }
}
