use serde::{Deserialize, Serialize};

use super::{Condition, OperatorClass, SellExpr, SellValue};
use crate::catalog::{TagCatalog, ValueType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IssueCode {
    UnknownKey,
    OperatorTypeMismatch,
    ValueNotAllowed,
    InvalidBoolean,
    BetweenBoundsReversed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    /// Child indices from the root to the offending condition.
    pub path: Vec<usize>,
    pub code: IssueCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    fn from_issues(issues: Vec<ValidationIssue>) -> Self {
        ValidationReport {
            ok: issues.is_empty(),
            issues,
        }
    }

    pub fn has(&self, code: IssueCode) -> bool {
        self.issues.iter().any(|i| i.code == code)
    }
}

/// Checks every condition against the catalog and collects all findings.
pub fn validate(expr: &SellExpr, catalog: &TagCatalog) -> ValidationReport {
    let mut issues = Vec::new();
    let mut path = Vec::new();
    walk(expr, catalog, &mut path, &mut issues);
    ValidationReport::from_issues(issues)
}

fn walk(
    expr: &SellExpr,
    catalog: &TagCatalog,
    path: &mut Vec<usize>,
    issues: &mut Vec<ValidationIssue>,
) {
    match expr {
        SellExpr::Condition(c) => check_condition(c, catalog, path, issues),
        SellExpr::And(children) | SellExpr::Or(children) => {
            for (i, child) in children.iter().enumerate() {
                path.push(i);
                walk(child, catalog, path, issues);
                path.pop();
            }
        }
    }
}

fn check_condition(
    c: &Condition,
    catalog: &TagCatalog,
    path: &[usize],
    issues: &mut Vec<ValidationIssue>,
) {
    let mut push = |code, message: String| {
        issues.push(ValidationIssue {
            path: path.to_vec(),
            code,
            message,
        })
    };

    if let SellValue::NumberPair(lo, hi) = &c.value {
        if lo > hi {
            push(
                IssueCode::BetweenBoundsReversed,
                format!("`{}`: Between bounds {lo},{hi} are out of order", c.key),
            );
        }
    }

    let Some(tag) = catalog.get(&c.key) else {
        push(
            IssueCode::UnknownKey,
            format!("`{}` is not a catalog tag", c.key),
        );
        return;
    };

    let class_ok = match tag.value_type {
        ValueType::Numeric => c.operator.class() == OperatorClass::Numeric,
        ValueType::String | ValueType::Boolean => c.operator.class() == OperatorClass::Set,
    };
    if !class_ok {
        push(
            IssueCode::OperatorTypeMismatch,
            format!(
                "`{}` cannot be applied to {:?} tag `{}`",
                c.operator, tag.value_type, tag.name
            ),
        );
        return;
    }

    match tag.value_type {
        ValueType::Boolean => {
            if !matches!(c.value, SellValue::Bool(_)) {
                push(
                    IssueCode::InvalidBoolean,
                    format!("`{}` expects True or False, got `{}`", tag.name, c.value),
                );
            }
        }
        ValueType::String => {
            let text = c.value.text();
            if !tag.allows(&text) {
                push(
                    IssueCode::ValueNotAllowed,
                    format!("`{text}` is not an allowed value of `{}`", tag.name),
                );
            }
        }
        ValueType::Numeric => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::TagDef;
    use crate::sell::parse;

    fn catalog() -> TagCatalog {
        TagCatalog::new(vec![
            TagDef::new("Gender", ValueType::String).with_values(["Male", "Female"]),
            TagDef::new("User Age Group", ValueType::Numeric),
            TagDef::new("Resident City", ValueType::String).with_values(["City A", "City B"]),
            TagDef::new("Preference", ValueType::String).multi(),
            TagDef::new("Pet Owning", ValueType::Boolean),
        ])
        .unwrap()
    }

    fn report(text: &str) -> ValidationReport {
        validate(&parse(text).unwrap(), &catalog())
    }

    #[test]
    fn numeric_operator_on_string_tag() {
        let r = report("(Gender#Greater Than#3)");
        assert!(!r.ok);
        assert_eq!(r.issues[0].code, IssueCode::OperatorTypeMismatch);
    }

    #[test]
    fn between_on_numeric_tag_is_ok() {
        assert!(report("(User Age Group#Between#18,35)").ok);
    }

    #[test]
    fn closed_list_rejects_unknown_value() {
        let r = report(
            "(Preference#Belongs To#Starbucks) AND (Resident City#Belongs To#Company white-collar)",
        );
        assert_eq!(r.issues.len(), 1);
        assert_eq!(r.issues[0].code, IssueCode::ValueNotAllowed);
        assert_eq!(r.issues[0].path, vec![1]);
    }

    #[test]
    fn collects_every_issue() {
        let r = report(
            "((Height#Greater Than#3) OR (Pet Owning#Belongs To#Cats)) AND (User Age Group#Between#40,20) AND (Pet Owning#Equal To#1)",
        );
        let codes: Vec<_> = r.issues.iter().map(|i| (i.code, i.path.clone())).collect();
        assert_eq!(
            codes,
            vec![
                (IssueCode::UnknownKey, vec![0, 0]),
                (IssueCode::InvalidBoolean, vec![0, 1]),
                (IssueCode::BetweenBoundsReversed, vec![1]),
                (IssueCode::OperatorTypeMismatch, vec![2]),
            ]
        );
        assert!(!r.ok);
    }

    #[test]
    fn set_operator_on_numeric_tag() {
        assert!(report("(User Age Group#Belongs To#Young)").has(IssueCode::OperatorTypeMismatch));
    }
}
