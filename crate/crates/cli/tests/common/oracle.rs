//! Slow reference implementations used to cross-check the library.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use sellkit_core::retrieval::EmbeddingVector;
use sellkit_core::sell::{Combinator, Condition, Operator, SellExpr, SellValue};
use sellkit_core::targeting::{TagValue, UserRecord};

/// Edit distance by memoized recursion on suffixes.
pub fn edit_distance(a: &str, b: &str) -> usize {
    fn go(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&d) = memo.get(&(a.len(), b.len())) {
            return d;
        }
        let d = if a[0] == b[0] {
            go(&a[1..], &b[1..], memo)
        } else {
            1 + go(&a[1..], b, memo)
                .min(go(a, &b[1..], memo))
                .min(go(&a[1..], &b[1..], memo))
        };
        memo.insert((a.len(), b.len()), d);
        d
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    go(&a, &b, &mut HashMap::new())
}

pub fn levenshtein_sim(a: &str, b: &str) -> f64 {
    let m = a.chars().count().max(b.chars().count());
    if m == 0 {
        1.0
    } else {
        1.0 - edit_distance(a, b) as f64 / m as f64
    }
}

/// Gestalt matching with a brute-force block search: every start pair is
/// extended directly; the first longest in (a, b) order wins.
pub fn gestalt_matches(a: &[char], b: &[char]) -> usize {
    let mut best = (0, 0, 0);
    for i in 0..a.len() {
        for j in 0..b.len() {
            let mut k = 0;
            while i + k < a.len() && j + k < b.len() && a[i + k] == b[j + k] {
                k += 1;
            }
            if k > best.2 {
                best = (i, j, k);
            }
        }
    }
    let (i, j, k) = best;
    if k == 0 {
        return 0;
    }
    k + gestalt_matches(&a[..i], &b[..j]) + gestalt_matches(&a[i + k..], &b[j + k..])
}

pub fn ratcliff_obershelp(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * gestalt_matches(&a, &b) as f64 / (a.len() + b.len()) as f64
}

const CJK: [(u32, u32); 8] = [
    (0x3000, 0x303F),
    (0x3040, 0x30FF),
    (0x3400, 0x4DBF),
    (0x4E00, 0x9FFF),
    (0xAC00, 0xD7AF),
    (0xF900, 0xFAFF),
    (0xFF00, 0xFFEF),
    (0x20000, 0x2FA1F),
];

/// Pads every standalone character with spaces, then splits.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut padded = String::new();
    for c in text.chars() {
        let cjk = CJK.iter().any(|&(lo, hi)| (lo..=hi).contains(&(c as u32)));
        if cjk || "()#".contains(c) {
            padded.push(' ');
            padded.push(c);
            padded.push(' ');
        } else {
            padded.push(c);
        }
    }
    padded.split_whitespace().map(str::to_string).collect()
}

fn ngrams(tokens: &[String], n: usize) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for i in 0..(tokens.len() + 1).saturating_sub(n) {
        *out.entry(tokens[i..i + n].join("\u{1}")).or_insert(0) += 1;
    }
    out
}

/// Corpus BLEU-4, uniform weights, no smoothing.
pub fn corpus_bleu(preds: &[String], refs: &[String]) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (p, g) in preds.iter().zip(refs) {
        let p = tokenize(p);
        let g = tokenize(g);
        c += p.len();
        r += g.len();
        for n in 1..=4 {
            let refs = ngrams(&g, n);
            for (gram, count) in ngrams(&p, n) {
                matched[n - 1] += count.min(*refs.get(&gram).unwrap_or(&0));
                total[n - 1] += count;
            }
        }
    }
    if c == 0 || matched.contains(&0) {
        return 0.0;
    }
    let mut log_p = 0.0;
    for n in 0..4 {
        log_p += (matched[n] as f64 / total[n] as f64).ln() / 4.0;
    }
    let bp = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    100.0 * bp * log_p.exp()
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    dot / (a.norm() * b.norm())
}

/// Every item scored, best first, ties by id.
pub fn scan<'a>(
    query: &EmbeddingVector,
    items: &'a [(String, EmbeddingVector)],
) -> Vec<(&'a str, f64)> {
    let mut all: Vec<(&str, f64)> = items
        .iter()
        .map(|(id, v)| (id.as_str(), cosine(query, v)))
        .collect();
    all.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(y.0)));
    all
}

/// Truth of one condition for one record, straight from the semantics
/// table: absent tags never match.
pub fn condition_holds(c: &Condition, record: &UserRecord) -> bool {
    let Some(value) = record.assignments.get(&c.key) else {
        return false;
    };
    let same = |x: &str, y: &str| x.trim() == y.trim();
    match (value, &c.value) {
        (TagValue::Number(x), SellValue::Number(v)) => match c.operator {
            Operator::EqualTo => x == v,
            Operator::NotEqualTo => x != v,
            Operator::GreaterThan => x > v,
            Operator::LessThan => x < v,
            Operator::NotGreaterThan => x <= v,
            Operator::NotLessThan => x >= v,
            _ => panic!("operator {} on a number", c.operator),
        },
        (TagValue::Number(x), SellValue::NumberPair(lo, hi)) => lo <= x && x <= hi,
        (present, wanted) => {
            let member = match (present, wanted) {
                (TagValue::Bool(x), SellValue::Bool(v)) => x == v,
                (TagValue::Text(x), SellValue::Text(v)) => same(x, v),
                (TagValue::Set(xs), SellValue::Text(v)) => xs.iter().any(|x| same(x, v)),
                other => panic!("type mismatch {other:?}"),
            };
            match c.operator {
                Operator::BelongsTo => member,
                Operator::NotBelongsTo => !member,
                op => panic!("operator {op} on a set value"),
            }
        }
    }
}

/// Ids matching `expr`: per-condition match sets combined with set
/// intersection and union.
pub fn select(expr: &SellExpr, records: &[UserRecord]) -> BTreeSet<String> {
    match expr {
        SellExpr::Condition(c) => records
            .iter()
            .filter(|r| condition_holds(c, r))
            .map(|r| r.user_id.clone())
            .collect(),
        group => {
            let mut sets = group.children().iter().map(|e| select(e, records));
            let first = sets.next().unwrap_or_default();
            match group.combinator() {
                Some(Combinator::And) => sets.fold(first, |acc, s| &acc & &s),
                _ => sets.fold(first, |acc, s| &acc | &s),
            }
        }
    }
}
