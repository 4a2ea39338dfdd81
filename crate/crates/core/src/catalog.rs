//! Tag schema of the marketing database.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Numeric,
    String,
    Boolean,
}

/// Integer sampling range for numeric tags, used by answer synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumericRange {
    pub min: i64,
    pub max: i64,
    #[serde(default = "default_step")]
    pub step: i64,
}

fn default_step() -> i64 {
    1
}

impl NumericRange {
    /// Number of admissible values `min, min+step, ..` not exceeding `max`.
    pub fn len(&self) -> u64 {
        ((self.max - self.min) / self.step) as u64 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nth(&self, i: u64) -> i64 {
        self.min + self.step * i as i64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagDef {
    pub name: String,
    pub value_type: ValueType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_values: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub multi_valued: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<NumericRange>,
}

impl TagDef {
    pub fn new(name: impl Into<String>, value_type: ValueType) -> Self {
        TagDef {
            name: name.into(),
            value_type,
            allowed_values: None,
            multi_valued: false,
            description: None,
            range: None,
        }
    }

    pub fn with_values<I, S>(mut self, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.allowed_values = Some(values.into_iter().map(Into::into).collect());
        self
    }

    pub fn multi(mut self) -> Self {
        self.multi_valued = true;
        self
    }

    pub fn described(mut self, description: impl Into<String>) -> Self {
        self.description = Some(description.into());
        self
    }

    pub fn ranged(mut self, min: i64, max: i64, step: i64) -> Self {
        self.range = Some(NumericRange { min, max, step });
        self
    }

    /// Whether `value` is admissible for a closed-set string tag. Open
    /// tags accept anything.
    pub fn allows(&self, value: &str) -> bool {
        match &self.allowed_values {
            None => true,
            Some(list) => {
                let v = normalize_text(value);
                list.iter().any(|a| normalize_text(a) == v)
            }
        }
    }

    /// Text the tag is embedded under for retrieval.
    pub fn embedding_text(&self) -> String {
        match &self.description {
            Some(d) if !d.trim().is_empty() => format!("{}: {}", self.name, d),
            _ => self.name.clone(),
        }
    }
}

/// NFC-normalized, trimmed form used for all string comparisons.
pub fn normalize_text(s: &str) -> String {
    s.trim().nfc().collect()
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("duplicate tag name `{0}`")]
    Duplicate(String),
    #[error("tag `{name}`: {reason}")]
    InvalidTag { name: String, reason: String },
    #[error("reading catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("decoding catalog: {0}")]
    Json(#[from] serde_json::Error),
}

/// Ordered tag list with name lookup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TagDef>", into = "Vec<TagDef>")]
pub struct TagCatalog {
    tags: Vec<TagDef>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TagCatalog {
    pub fn new(tags: Vec<TagDef>) -> Result<Self, CatalogError> {
        let mut index = HashMap::with_capacity(tags.len());
        for (i, tag) in tags.iter().enumerate() {
            check_tag(tag)?;
            if index.insert(tag.name.clone(), i).is_some() {
                return Err(CatalogError::Duplicate(tag.name.clone()));
            }
        }
        Ok(TagCatalog { tags, index })
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn get(&self, name: &str) -> Option<&TagDef> {
        self.index
            .get(name)
            .or_else(|| self.index.get(name.trim()))
            .map(|&i| &self.tags[i])
    }

    pub fn tags(&self) -> &[TagDef] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

fn check_tag(tag: &TagDef) -> Result<(), CatalogError> {
    let invalid = |reason: &str| CatalogError::InvalidTag {
        name: tag.name.clone(),
        reason: reason.to_string(),
    };
    if tag.name.trim().is_empty() {
        return Err(invalid("empty name"));
    }
    if tag.name.contains(['#', '(', ')']) {
        return Err(invalid("name contains a reserved character"));
    }
    if tag.value_type != ValueType::String {
        if tag.allowed_values.is_some() {
            return Err(invalid("allowed_values is only valid on string tags"));
        }
        if tag.multi_valued {
            return Err(invalid("multi_valued is only valid on string tags"));
        }
    }
    if let Some(values) = &tag.allowed_values {
        if values
            .iter()
            .any(|v| v.trim().is_empty() || v.contains(['#', '(', ')']))
        {
            return Err(invalid(
                "allowed value is empty or contains a reserved character",
            ));
        }
    }
    if let Some(r) = tag.range {
        if tag.value_type != ValueType::Numeric {
            return Err(invalid("range is only valid on numeric tags"));
        }
        if r.min > r.max || r.step < 1 {
            return Err(invalid("range needs min <= max and step >= 1"));
        }
    }
    Ok(())
}

impl TryFrom<Vec<TagDef>> for TagCatalog {
    type Error = CatalogError;

    fn try_from(tags: Vec<TagDef>) -> Result<Self, Self::Error> {
        TagCatalog::new(tags)
    }
}

impl From<TagCatalog> for Vec<TagDef> {
    fn from(c: TagCatalog) -> Self {
        c.tags
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_misplaced_fields() {
        let dup = TagCatalog::new(vec![
            TagDef::new("Gender", ValueType::String),
            TagDef::new("Gender", ValueType::String),
        ]);
        assert!(matches!(dup, Err(CatalogError::Duplicate(_))));
        let bad = TagCatalog::new(vec![
            TagDef::new("Age", ValueType::Numeric).with_values(["1"])
        ]);
        assert!(matches!(bad, Err(CatalogError::InvalidTag { .. })));
        let bad = TagCatalog::new(vec![TagDef::new("Age", ValueType::Numeric).ranged(5, 1, 1)]);
        assert!(bad.is_err());
    }

    #[test]
    fn json_round_trip_keeps_lookup() {
        let json = r#"[
            {"name":"Gender","value_type":"string","allowed_values":["Male","Female"]},
            {"name":"User Age Group","value_type":"numeric","range":{"min":0,"max":100}},
            {"name":"VIP","value_type":"boolean","description":"premium member"}
        ]"#;
        let cat: TagCatalog = serde_json::from_str(json).unwrap();
        assert_eq!(cat.get("User Age Group").unwrap().range.unwrap().step, 1);
        assert_eq!(
            cat.get("VIP").unwrap().embedding_text(),
            "VIP: premium member"
        );
        let back: TagCatalog = serde_json::from_str(&serde_json::to_string(&cat).unwrap()).unwrap();
        assert_eq!(back.get("Gender"), cat.get("Gender"));
    }

    #[test]
    fn allowed_values_compare_normalized() {
        let tag = TagDef::new("City", ValueType::String).with_values(["Caf\u{e9}"]);
        assert!(tag.allows(" Cafe\u{301} "));
        assert!(!tag.allows("Cafe"));
    }

    #[test]
    fn range_enumeration() {
        let r = NumericRange {
            min: 0,
            max: 10,
            step: 3,
        };
        assert_eq!(r.len(), 4);
        assert_eq!(r.nth(3), 9);
    }
}
