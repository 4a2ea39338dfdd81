//! Executes SELL expressions over an in-memory user-tag database.
//!
//! Semantics: `Between` is inclusive on both ends; a record without the
//! referenced tag never matches, under any operator including the `Not*`
//! family; strings compare exactly after NFC normalization and trimming.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{normalize_text, TagCatalog, TagDef, ValueType};
use crate::sell::{validate, Condition, Operator, SellExpr, SellValue, ValidationReport};

/// A value assigned to a user for one tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TagValue {
    Number(Decimal),
    Text(String),
    Set(BTreeSet<String>),
    Bool(bool),
}

impl Serialize for TagValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TagValue::Number(n) => {
                let json = serde_json::Number::from_str(&n.normalize().to_string())
                    .map_err(serde::ser::Error::custom)?;
                json.serialize(s)
            }
            TagValue::Text(t) => s.serialize_str(t),
            TagValue::Set(items) => items.serialize(s),
            TagValue::Bool(b) => s.serialize_bool(*b),
        }
    }
}

impl<'de> Deserialize<'de> for TagValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Number(n) => Decimal::from_str(&n.to_string())
                .or_else(|_| Decimal::from_scientific(&n.to_string()))
                .map(TagValue::Number)
                .map_err(D::Error::custom),
            serde_json::Value::String(t) => Ok(TagValue::Text(t)),
            serde_json::Value::Bool(b) => Ok(TagValue::Bool(b)),
            serde_json::Value::Array(items) => items
                .into_iter()
                .map(|v| match v {
                    serde_json::Value::String(t) => Ok(t),
                    other => Err(D::Error::custom(format!(
                        "set member must be a string, got {other}"
                    ))),
                })
                .collect::<Result<BTreeSet<_>, _>>()
                .map(TagValue::Set),
            other => Err(D::Error::custom(format!("unsupported tag value {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    #[serde(default)]
    pub assignments: BTreeMap<String, TagValue>,
}

#[derive(Debug, Error)]
pub enum TargetingError {
    #[error("user `{user_id}`, tag `{tag}`: {reason}")]
    TypeMismatch {
        user_id: String,
        tag: String,
        reason: String,
    },
    #[error("tag `{0}` is not in the catalog")]
    UnknownTag(String),
    #[error("expression does not validate against the catalog")]
    Invalid(ValidationReport),
    #[error("line {line}: {source}")]
    Decode {
        line: usize,
        source: serde_json::Error,
    },
    #[error("duplicate user id `{0}`")]
    DuplicateUser(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn check_assignment(user_id: &str, tag: &TagDef, value: &TagValue) -> Result<(), TargetingError> {
    let mismatch = |reason: String| TargetingError::TypeMismatch {
        user_id: user_id.to_string(),
        tag: tag.name.clone(),
        reason,
    };
    match (tag.value_type, value) {
        (ValueType::Numeric, TagValue::Number(_)) | (ValueType::Boolean, TagValue::Bool(_)) => {
            Ok(())
        }
        (ValueType::String, TagValue::Text(t)) => {
            if tag.allows(t) {
                Ok(())
            } else {
                Err(mismatch(format!("`{t}` is not an allowed value")))
            }
        }
        (ValueType::String, TagValue::Set(items)) if tag.multi_valued => {
            match items.iter().find(|t| !tag.allows(t)) {
                Some(t) => Err(mismatch(format!("`{t}` is not an allowed value"))),
                None => Ok(()),
            }
        }
        (vt, v) => Err(mismatch(format!("{v:?} does not fit a {vt:?} tag"))),
    }
}

/// Catalog plus records; every record is checked against the catalog on
/// construction.
#[derive(Debug, Clone)]
pub struct UserDb {
    catalog: TagCatalog,
    records: Vec<UserRecord>,
}

impl UserDb {
    pub fn new(catalog: TagCatalog, records: Vec<UserRecord>) -> Result<Self, TargetingError> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.user_id.as_str()) {
                return Err(TargetingError::DuplicateUser(r.user_id.clone()));
            }
            for (name, value) in &r.assignments {
                let tag = catalog
                    .get(name)
                    .ok_or_else(|| TargetingError::UnknownTag(name.clone()))?;
                check_assignment(&r.user_id, tag, value)?;
            }
        }
        Ok(UserDb { catalog, records })
    }

    /// Reads JSON Lines, one record per non-blank line.
    pub fn from_jsonl(catalog: TagCatalog, reader: impl BufRead) -> Result<Self, TargetingError> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|source| TargetingError::Decode {
                line: i + 1,
                source,
            })?;
            records.push(rec);
        }
        UserDb::new(catalog, records)
    }

    pub fn load(catalog: TagCatalog, path: &Path) -> Result<Self, TargetingError> {
        let file = std::fs::File::open(path)?;
        UserDb::from_jsonl(catalog, std::io::BufReader::new(file))
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<(), TargetingError> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn catalog(&self) -> &TagCatalog {
        &self.catalog
    }

    pub fn records(&self) -> &[UserRecord] {
        &self.records
    }
}

/// Evaluates one condition against one record.
pub fn eval_condition(
    cond: &Condition,
    record: &UserRecord,
    catalog: &TagCatalog,
) -> Result<bool, TargetingError> {
    let tag = catalog
        .get(&cond.key)
        .ok_or_else(|| TargetingError::UnknownTag(cond.key.clone()))?;
    let Some(value) = record.assignments.get(&tag.name) else {
        return Ok(false);
    };
    let mismatch = |reason: &str| TargetingError::TypeMismatch {
        user_id: record.user_id.clone(),
        tag: tag.name.clone(),
        reason: reason.to_string(),
    };

    match tag.value_type {
        ValueType::Numeric => {
            let TagValue::Number(x) = value else {
                return Err(mismatch("numeric tag holds a non-numeric value"));
            };
            let x = *x;
            Ok(match (&cond.operator, &cond.value) {
                (Operator::Between, SellValue::NumberPair(lo, hi)) => *lo <= x && x <= *hi,
                (op, SellValue::Number(v)) => match op {
                    Operator::EqualTo => x == *v,
                    Operator::GreaterThan => x > *v,
                    Operator::LessThan => x < *v,
                    Operator::NotEqualTo => x != *v,
                    Operator::NotGreaterThan => x <= *v,
                    Operator::NotLessThan => x >= *v,
                    _ => return Err(mismatch("set operator on a numeric tag")),
                },
                _ => return Err(mismatch("condition value does not fit its operator")),
            })
        }
        ValueType::String | ValueType::Boolean => {
            let positive = match cond.operator {
                Operator::BelongsTo => true,
                Operator::NotBelongsTo => false,
                _ => return Err(mismatch("numeric operator on a set-valued tag")),
            };
            let hit = match (value, &cond.value) {
                (TagValue::Bool(b), SellValue::Bool(v)) => b == v,
                (TagValue::Bool(_), _) => false,
                (TagValue::Text(t), v) => normalize_text(t) == normalize_text(&v.text()),
                (TagValue::Set(items), v) => {
                    let needle = normalize_text(&v.text());
                    items.iter().any(|t| normalize_text(t) == needle)
                }
                (TagValue::Number(_), _) => {
                    return Err(mismatch("numeric value on a string or boolean tag"))
                }
            };
            Ok(hit == positive)
        }
    }
}

pub fn eval(
    expr: &SellExpr,
    record: &UserRecord,
    catalog: &TagCatalog,
) -> Result<bool, TargetingError> {
    match expr {
        SellExpr::Condition(c) => eval_condition(c, record, catalog),
        SellExpr::And(children) => {
            for c in children {
                if !eval(c, record, catalog)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        SellExpr::Or(children) => {
            for c in children {
                if eval(c, record, catalog)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
    }
}

/// Ids of matching users, sorted ascending. Records are evaluated in
/// parallel; the sort makes the output independent of scheduling.
pub fn select_users(expr: &SellExpr, db: &UserDb) -> Result<Vec<String>, TargetingError> {
    let report = validate(expr, &db.catalog);
    if !report.ok {
        return Err(TargetingError::Invalid(report));
    }
    let matched: Result<Vec<Option<&str>>, TargetingError> = db
        .records
        .par_iter()
        .map(|r| Ok(eval(expr, r, &db.catalog)?.then_some(r.user_id.as_str())))
        .collect();
    let mut ids: Vec<String> = matched?.into_iter().flatten().map(str::to_string).collect();
    ids.sort();
    Ok(ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(format!("unknown export format `{other}`")),
        }
    }
}

impl ExportFormat {
    pub fn content_type(self) -> &'static str {
        match self {
            ExportFormat::Csv => "text/csv",
            ExportFormat::Json => "application/json",
        }
    }
}

/// Writes a segment as CSV (header `user_id`) or a JSON string array.
pub fn export_segment(
    ids: &[String],
    format: ExportFormat,
    mut w: impl Write,
) -> Result<(), TargetingError> {
    match format {
        ExportFormat::Csv => {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["user_id"])?;
            for id in ids {
                csv.write_record([id])?;
            }
            csv.flush()?;
        }
        ExportFormat::Json => {
            serde_json::to_writer(&mut w, ids)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn export_segment_to_path(
    ids: &[String],
    format: ExportFormat,
    path: &Path,
) -> Result<(), TargetingError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    export_segment(ids, format, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_segment(
    format: ExportFormat,
    r: impl std::io::Read,
) -> Result<Vec<String>, TargetingError> {
    match format {
        ExportFormat::Csv => {
            let mut csv = csv::Reader::from_reader(r);
            let mut ids = Vec::new();
            for row in csv.records() {
                ids.push(row?.get(0).unwrap_or_default().to_string());
            }
            Ok(ids)
        }
        ExportFormat::Json => Ok(serde_json::from_reader(r)?),
    }
}

/// Deterministic synthetic population for fixtures and tests. Each tag is
/// assigned with probability 0.8 so missing-tag behaviour is exercised.
pub fn synthetic_users(catalog: &TagCatalog, count: usize, seed: u64) -> Vec<UserRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut assignments = BTreeMap::new();
            for tag in catalog.tags() {
                if !rng.gen_bool(0.8) {
                    continue;
                }
                let value = match tag.value_type {
                    ValueType::Boolean => Some(TagValue::Bool(rng.gen())),
                    ValueType::Numeric => {
                        let r = tag.range.unwrap_or(crate::catalog::NumericRange {
                            min: 0,
                            max: 100,
                            step: 1,
                        });
                        Some(TagValue::Number(Decimal::from(
                            r.nth(rng.gen_range(0..r.len())),
                        )))
                    }
                    ValueType::String => match &tag.allowed_values {
                        Some(values) if !values.is_empty() => {
                            if tag.multi_valued {
                                let n = rng.gen_range(1..=values.len().min(3));
                                Some(TagValue::Set(
                                    values.choose_multiple(&mut rng, n).cloned().collect(),
                                ))
                            } else {
                                values.choose(&mut rng).cloned().map(TagValue::Text)
                            }
                        }
                        _ => None,
                    },
                };
                if let Some(v) = value {
                    assignments.insert(tag.name.clone(), v);
                }
            }
            UserRecord {
                user_id: format!("u{i:05}"),
                assignments,
            }
        })
        .collect()
}
