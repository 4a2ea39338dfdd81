use std::collections::BTreeMap;

use thiserror::Error;

use super::{Condition, Operator, SellExpr, SellValue, ValueError};

/// Parser configuration.
///
/// The default accepts case-insensitive operator names and a small alias
/// table for drift seen in model output (`Belongs`, `Belong To`). Use
/// [`ParseOptions::strict`] to accept canonical spellings only.
#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub aliases: BTreeMap<String, Operator>,
    pub case_insensitive: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        let aliases = [
            ("belongs", Operator::BelongsTo),
            ("belong to", Operator::BelongsTo),
            ("belong", Operator::BelongsTo),
            ("not belongs", Operator::NotBelongsTo),
            ("not belong to", Operator::NotBelongsTo),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        ParseOptions {
            aliases,
            case_insensitive: true,
        }
    }
}

impl ParseOptions {
    pub fn strict() -> Self {
        ParseOptions {
            aliases: BTreeMap::new(),
            case_insensitive: false,
        }
    }

    pub fn with_alias(mut self, alias: &str, op: Operator) -> Self {
        self.aliases.insert(alias_key(alias), op);
        self
    }

    /// Maps operator text to an [`Operator`]; internal whitespace runs are
    /// collapsed first.
    pub fn resolve_operator(&self, raw: &str) -> Option<Operator> {
        let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ");
        if let Some(op) = Operator::from_canonical(&collapsed) {
            return Some(op);
        }
        if self.case_insensitive {
            if let Some(op) = Operator::ALL
                .into_iter()
                .find(|op| op.as_str().eq_ignore_ascii_case(&collapsed))
            {
                return Some(op);
            }
        }
        self.aliases.get(&alias_key(&collapsed)).copied()
    }
}

fn alias_key(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_ascii_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty input")]
    Empty,
    #[error("syntax error at {position}: expected {expected}, found {found}")]
    Syntax {
        position: usize,
        expected: String,
        found: String,
    },
    #[error("unknown operator `{operator}` at {position}")]
    UnknownOperator { position: usize, operator: String },
    #[error("malformed Between value `{value}` at {position}: expected `lo,hi`")]
    MalformedBetweenValue { position: usize, value: String },
    #[error("malformed numeric value `{value}` at {position}")]
    MalformedNumber { position: usize, value: String },
    #[error("empty {what} at {position}")]
    EmptyField { position: usize, what: &'static str },
}

impl ParseError {
    pub fn position(&self) -> Option<usize> {
        match self {
            ParseError::Empty => None,
            ParseError::Syntax { position, .. }
            | ParseError::UnknownOperator { position, .. }
            | ParseError::MalformedBetweenValue { position, .. }
            | ParseError::MalformedNumber { position, .. }
            | ParseError::EmptyField { position, .. } => Some(*position),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ParseError::Empty => "Empty",
            ParseError::Syntax { .. } => "SyntaxError",
            ParseError::UnknownOperator { .. } => "UnknownOperator",
            ParseError::MalformedBetweenValue { .. } => "MalformedBetweenValue",
            ParseError::MalformedNumber { .. } => "MalformedNumber",
            ParseError::EmptyField { .. } => "EmptyField",
        }
    }
}

/// Parses SELL text with the default options.
pub fn parse(text: &str) -> Result<SellExpr, ParseError> {
    parse_with(text, &ParseOptions::default())
}

pub fn parse_with(text: &str, options: &ParseOptions) -> Result<SellExpr, ParseError> {
    let chars: Vec<char> = text.chars().map(normalize_width).collect();
    if chars.iter().all(|c| c.is_whitespace()) {
        return Err(ParseError::Empty);
    }
    let mut p = Parser {
        chars,
        pos: 0,
        options,
    };
    let expr = p.expr()?;
    p.skip_ws();
    if p.pos < p.chars.len() {
        return Err(p.syntax("AND, OR or end of input"));
    }
    Ok(expr)
}

/// Full-width punctuation to half-width; model output mixes both.
fn normalize_width(c: char) -> char {
    match c {
        '（' => '(',
        '）' => ')',
        '＃' => '#',
        '，' => ',',
        '\u{3000}' => ' ',
        other => other,
    }
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    options: &'a ParseOptions,
}

impl Parser<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn found(&self) -> String {
        match self.peek() {
            Some(c) => format!("`{c}`"),
            None => "end of input".to_string(),
        }
    }

    fn syntax(&self, expected: &str) -> ParseError {
        ParseError::Syntax {
            position: self.pos,
            expected: expected.to_string(),
            found: self.found(),
        }
    }

    /// Consumes `word` when it appears as a whole keyword at the cursor.
    fn keyword(&mut self, word: &str) -> bool {
        self.skip_ws();
        let len = word.chars().count();
        if self.pos + len > self.chars.len() {
            return false;
        }
        let candidate: String = self.chars[self.pos..self.pos + len].iter().collect();
        if !candidate.eq_ignore_ascii_case(word) {
            return false;
        }
        let boundary = self
            .chars
            .get(self.pos + len)
            .is_none_or(|c| c.is_whitespace() || *c == '(');
        if boundary {
            self.pos += len;
        }
        boundary
    }

    fn expr(&mut self) -> Result<SellExpr, ParseError> {
        let mut terms = vec![self.term()?];
        while self.keyword("OR") {
            terms.push(self.term()?);
        }
        Ok(SellExpr::or(terms))
    }

    fn term(&mut self) -> Result<SellExpr, ParseError> {
        let mut factors = vec![self.factor()?];
        while self.keyword("AND") {
            factors.push(self.factor()?);
        }
        Ok(SellExpr::and(factors))
    }

    fn factor(&mut self) -> Result<SellExpr, ParseError> {
        self.skip_ws();
        if self.peek() != Some('(') {
            return Err(self.syntax("`(`"));
        }
        if self.opens_condition() {
            return self.condition().map(SellExpr::Condition);
        }
        self.pos += 1;
        let inner = self.expr()?;
        self.skip_ws();
        if self.peek() != Some(')') {
            return Err(self.syntax("`)`"));
        }
        self.pos += 1;
        Ok(inner)
    }

    /// A `(` opens a condition when a `#` occurs before the next paren.
    fn opens_condition(&self) -> bool {
        self.chars[self.pos + 1..]
            .iter()
            .find(|c| matches!(c, '#' | '(' | ')'))
            == Some(&'#')
    }

    /// Reads up to (not including) `stop`, failing on any other reserved char.
    fn field(&mut self, stop: char, what: &'static str) -> Result<(usize, String), ParseError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c == stop {
                let text: String = self.chars[start..self.pos].iter().collect();
                let trimmed = text.trim().to_string();
                if trimmed.is_empty() {
                    return Err(ParseError::EmptyField {
                        position: start,
                        what,
                    });
                }
                self.pos += 1;
                return Ok((start, trimmed));
            }
            if matches!(c, '#' | '(' | ')') {
                break;
            }
            self.pos += 1;
        }
        Err(self.syntax(&format!("`{stop}`")))
    }

    fn condition(&mut self) -> Result<Condition, ParseError> {
        self.pos += 1; // '('
        let (_, key) = self.field('#', "key")?;
        let (op_pos, op_text) = self.field('#', "operator")?;
        let (value_pos, value_text) = self.field(')', "value")?;
        let operator =
            self.options
                .resolve_operator(&op_text)
                .ok_or_else(|| ParseError::UnknownOperator {
                    position: op_pos,
                    operator: op_text.clone(),
                })?;
        let value = SellValue::from_surface(operator, &value_text).map_err(|e| match e {
            ValueError::MalformedBetween(value) => ParseError::MalformedBetweenValue {
                position: value_pos,
                value,
            },
            ValueError::MalformedNumber(value) => ParseError::MalformedNumber {
                position: value_pos,
                value,
            },
            // field() already rejects empty values and reserved characters.
            ValueError::Empty | ValueError::ReservedChar(_) => ParseError::EmptyField {
                position: value_pos,
                what: "value",
            },
        })?;
        Ok(Condition {
            key,
            operator,
            value,
        })
    }
}
