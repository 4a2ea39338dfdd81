//! Editable card tree shown on the marketer panel.
//!
//! The JSON form extends the AST interchange format with `node_id` and
//! `kind`; both are optional on input.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Combinator, Condition, ConditionError, SellExpr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Group,
    Condition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardNode {
    #[serde(default)]
    pub node_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<NodeKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<Combinator>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<CardNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

impl CardNode {
    pub fn group(node_id: String, op: Combinator, children: Vec<CardNode>) -> Self {
        CardNode {
            node_id,
            kind: Some(NodeKind::Group),
            op: Some(op),
            children,
            key: None,
            operator: None,
            value: None,
        }
    }

    pub fn leaf(node_id: String, c: &Condition) -> Self {
        CardNode {
            node_id,
            kind: Some(NodeKind::Condition),
            op: None,
            children: Vec::new(),
            key: Some(c.key.clone()),
            operator: Some(c.operator.as_str().to_string()),
            value: Some(c.value.to_string()),
        }
    }

    fn resolved_kind(&self) -> NodeKind {
        self.kind
            .unwrap_or(if self.op.is_some() || !self.children.is_empty() {
                NodeKind::Group
            } else {
                NodeKind::Condition
            })
    }

    /// Number of condition leaves.
    pub fn leaf_count(&self) -> usize {
        match self.resolved_kind() {
            NodeKind::Condition => 1,
            NodeKind::Group => self.children.iter().map(CardNode::leaf_count).sum(),
        }
    }

    /// Removes the node with `node_id`; returns whether anything was removed.
    pub fn remove(&mut self, node_id: &str) -> bool {
        if let Some(i) = self.children.iter().position(|c| c.node_id == node_id) {
            self.children.remove(i);
            return true;
        }
        self.children.iter_mut().any(|c| c.remove(node_id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CardError {
    #[error("group `{0}` has no children")]
    EmptyGroup(String),
    #[error("group `{0}` has no combinator")]
    MissingCombinator(String),
    #[error("condition `{node_id}` is missing `{field}`")]
    MissingField {
        node_id: String,
        field: &'static str,
    },
    #[error("condition `{node_id}`: {source}")]
    InvalidCondition {
        node_id: String,
        source: ConditionError,
    },
}

impl CardError {
    pub fn node_id(&self) -> &str {
        match self {
            CardError::EmptyGroup(id) | CardError::MissingCombinator(id) => id,
            CardError::MissingField { node_id, .. }
            | CardError::InvalidCondition { node_id, .. } => node_id,
        }
    }
}

pub fn to_card(expr: &SellExpr) -> CardNode {
    build("n".to_string(), expr)
}

fn build(node_id: String, expr: &SellExpr) -> CardNode {
    match expr {
        SellExpr::Condition(c) => CardNode::leaf(node_id, c),
        SellExpr::And(children) | SellExpr::Or(children) => {
            let kids = children
                .iter()
                .enumerate()
                .map(|(i, c)| build(format!("{node_id}.{i}"), c))
                .collect();
            CardNode::group(node_id, expr.combinator().unwrap(), kids)
        }
    }
}

/// Rebuilds a canonical expression; singleton groups are hoisted and
/// same-operator nesting is flattened.
pub fn from_card(card: &CardNode) -> Result<SellExpr, CardError> {
    match card.resolved_kind() {
        NodeKind::Condition => {
            let field = |v: &Option<String>, field: &'static str| {
                v.clone().ok_or_else(|| CardError::MissingField {
                    node_id: card.node_id.clone(),
                    field,
                })
            };
            let key = field(&card.key, "key")?;
            let operator = field(&card.operator, "operator")?;
            let value = field(&card.value, "value")?;
            Condition::from_parts(&key, &operator, &value)
                .map(SellExpr::Condition)
                .map_err(|source| CardError::InvalidCondition {
                    node_id: card.node_id.clone(),
                    source,
                })
        }
        NodeKind::Group => {
            let op = card
                .op
                .ok_or_else(|| CardError::MissingCombinator(card.node_id.clone()))?;
            if card.children.is_empty() {
                return Err(CardError::EmptyGroup(card.node_id.clone()));
            }
            let children = card
                .children
                .iter()
                .map(from_card)
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SellExpr::group(op, children))
        }
    }
}
