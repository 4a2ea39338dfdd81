use std::sync::LazyLock;

use rand::Rng;
use rust_decimal::Decimal;
use serde::Serialize;

use super::SynthError;
use crate::catalog::{TagCatalog, ValueType};
use crate::sell::{self, Condition, Operator, SellExpr, SellValue};

/// The 19 answer-synthesis patterns; `c` is a placeholder condition.
pub const PATTERNS: [&str; 19] = [
    "c",
    "c AND c",
    "c AND c AND c",
    "c AND c AND c AND c",
    "c OR c",
    "c OR c OR c",
    "c OR c OR c OR c",
    "(c AND c) OR c",
    "(c OR c) AND c",
    "(c AND c) OR (c AND c)",
    "(c OR c) AND (c OR c)",
    "c AND (c OR c OR c)",
    "c OR (c AND c AND c)",
    "(c AND c) OR (c OR c)",
    "(c AND c) AND (c OR c)",
    "c AND ((c AND c) OR c)",
    "c AND ((c OR c) AND c)",
    "c OR ((c OR c) AND c)",
    "c OR ((c AND c) OR c)",
];

const PLACEHOLDER: &str = "(c#Belongs To#c)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogicTemplate {
    /// 1-based position in [`PATTERNS`].
    pub id: usize,
    pub pattern: &'static str,
    /// Canonical tree over placeholder conditions.
    #[serde(skip)]
    pub tree: SellExpr,
    /// Canonical skeleton, e.g. `((##) OR (##)) AND (##)`.
    pub skeleton: String,
}

static ALL: LazyLock<Vec<LogicTemplate>> = LazyLock::new(|| {
    PATTERNS
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let tree = sell::parse(&p.replace('c', PLACEHOLDER)).expect("template parses");
            LogicTemplate {
                id: i + 1,
                pattern: p,
                skeleton: sell::extract_structure(&tree),
                tree,
            }
        })
        .collect()
});

impl LogicTemplate {
    pub fn all() -> &'static [LogicTemplate] {
        &ALL
    }

    pub fn get(id: usize) -> Option<&'static LogicTemplate> {
        id.checked_sub(1).and_then(|i| ALL.get(i))
    }

    pub fn leaves(&self) -> usize {
        self.tree.conditions().len()
    }
}

/// One random condition: a uniform tag, an operator uniform over the
/// tag's class, and a value drawn from the tag's domain.
pub fn sample_condition(catalog: &TagCatalog, rng: &mut impl Rng) -> Result<Condition, SynthError> {
    if catalog.is_empty() {
        return Err(SynthError::EmptyCatalog);
    }
    let tag = &catalog.tags()[rng.gen_range(0..catalog.len())];
    let operator = match tag.value_type {
        ValueType::Numeric => Operator::NUMERIC[rng.gen_range(0..Operator::NUMERIC.len())],
        ValueType::String | ValueType::Boolean => {
            Operator::SET[rng.gen_range(0..Operator::SET.len())]
        }
    };
    let value = match tag.value_type {
        ValueType::Boolean => SellValue::Bool(rng.gen_range(0..2) == 0),
        ValueType::String => {
            let values = tag
                .allowed_values
                .as_ref()
                .filter(|v| !v.is_empty())
                .ok_or_else(|| SynthError::TagWithoutValues(tag.name.clone()))?;
            SellValue::Text(values[rng.gen_range(0..values.len())].clone())
        }
        ValueType::Numeric => {
            let range = tag
                .range
                .ok_or_else(|| SynthError::TagWithoutRange(tag.name.clone()))?;
            let mut draw = || Decimal::from(range.nth(rng.gen_range(0..range.len())));
            if operator == Operator::Between {
                let (a, b) = (draw(), draw());
                SellValue::NumberPair(a.min(b), a.max(b))
            } else {
                SellValue::Number(draw())
            }
        }
    };
    Ok(Condition::new(tag.name.clone(), operator, value))
}

/// Fills every placeholder of `template` with an independent sample.
pub fn synthesize_answer(
    template: &LogicTemplate,
    catalog: &TagCatalog,
    rng: &mut impl Rng,
) -> Result<SellExpr, SynthError> {
    let mut leaves = (0..template.leaves())
        .map(|_| sample_condition(catalog, rng))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter();
    Ok(template
        .tree
        .map_conditions(&mut |_| SellExpr::Condition(leaves.next().expect("one per leaf"))))
}
