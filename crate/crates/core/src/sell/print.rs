use std::sync::LazyLock;

use regex::Regex;

use super::{parse, Combinator, Condition, ParseError, SellExpr};

/// Canonical serialization. Children of a group are joined by ` AND ` or
/// ` OR `; a nested group is parenthesized; the top level is never wrapped.
pub fn print(expr: &SellExpr) -> String {
    let mut out = String::new();
    render(expr, &mut out, &mut |c, out| {
        out.push('(');
        out.push_str(&c.key);
        out.push('#');
        out.push_str(c.operator.as_str());
        out.push('#');
        out.push_str(&c.value.to_string());
        out.push(')');
    });
    out
}

/// Logic skeleton: every condition becomes `(##)`, combinators and grouping
/// are kept in canonical layout.
pub fn extract_structure(expr: &SellExpr) -> String {
    let mut out = String::new();
    render(expr, &mut out, &mut |_, out| out.push_str("(##)"));
    out
}

pub fn extract_structure_str(text: &str) -> Result<String, ParseError> {
    parse(text).map(|e| extract_structure(&e))
}

fn render(expr: &SellExpr, out: &mut String, leaf: &mut impl FnMut(&Condition, &mut String)) {
    match expr {
        SellExpr::Condition(c) => leaf(c, out),
        SellExpr::And(children) | SellExpr::Or(children) => {
            let sep = match expr.combinator() {
                Some(Combinator::And) => " AND ",
                _ => " OR ",
            };
            for (i, child) in children.iter().enumerate() {
                if i > 0 {
                    out.push_str(sep);
                }
                if child.combinator().is_some() {
                    out.push('(');
                    render(child, out, leaf);
                    out.push(')');
                } else {
                    render(child, out, leaf);
                }
            }
        }
    }
}

static CONDITION_SPAN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[(（][^()（）#＃]*[#＃][^()（）#＃]*[#＃][^()（）]*[)）]").unwrap()
});
static SKELETON_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\(##\)|[(（]|[)）]|\bAND\b|\bOR\b").unwrap());

/// Skeleton for text that does not parse: condition-shaped spans become
/// `(##)`, then only `(##)`, parentheses and `AND`/`OR` survive. Text with no
/// structural tokens yields the empty string.
pub fn regex_skeleton(text: &str) -> String {
    let replaced = CONDITION_SPAN.replace_all(text, "(##)");
    let mut out = String::new();
    for m in SKELETON_TOKEN.find_iter(&replaced) {
        match m.as_str() {
            "AND" | "OR" => {
                out.push(' ');
                out.push_str(m.as_str());
                out.push(' ');
            }
            "（" => out.push('('),
            "）" => out.push(')'),
            tok => out.push_str(tok),
        }
    }
    out.trim().to_string()
}
