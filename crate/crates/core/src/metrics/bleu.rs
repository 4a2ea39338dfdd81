//! Corpus BLEU with a tokenizer for mixed CJK / Latin SELL text.

use std::collections::HashMap;

use super::MetricsError;

/// Identifier of the tokenization rules below; recorded in reports.
pub const TOKENIZER_VERSION: &str = "sell-v1";
pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Special,
    Cjk,
    Other,
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3000..=0x303F // CJK punctuation
        | 0x3040..=0x30FF // kana
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xAC00..=0xD7AF // hangul
        | 0xF900..=0xFAFF
        | 0xFF00..=0xFFEF // full-width forms
        | 0x20000..=0x2FA1F)
}

fn class(c: char) -> CharClass {
    if matches!(c, '(' | ')' | '#') {
        CharClass::Special
    } else if is_cjk(c) {
        CharClass::Cjk
    } else {
        CharClass::Other
    }
}

/// Whitespace split; then `(`, `)`, `#` and every CJK codepoint stand alone
/// and remaining runs stay whole.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut run = String::new();
        for c in chunk.chars() {
            match class(c) {
                CharClass::Other => run.push(c),
                CharClass::Special | CharClass::Cjk => {
                    if !run.is_empty() {
                        tokens.push(std::mem::take(&mut run));
                    }
                    tokens.push(c.to_string());
                }
            }
        }
        if !run.is_empty() {
            tokens.push(run);
        }
    }
    tokens
}

/// Sufficient statistics: clipped matches and totals per order, plus
/// hypothesis and reference lengths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn of_pair(pred: &str, reference: &str) -> Self {
        let hyp = tokenize(pred);
        let refr = tokenize(reference);
        let mut stats = BleuStats {
            hyp_len: hyp.len(),
            ref_len: refr.len(),
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(&refr, n);
            for (gram, count) in ngram_counts(&hyp, n) {
                stats.matches[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            stats.totals[n - 1] = hyp.len().saturating_sub(n - 1);
        }
        stats
    }

    fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// BLEU in `[0, 100]`. Any order with zero matches yields 0.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            if self.matches[n] == 0 || self.totals[n] == 0 {
                return 0.0;
            }
            let p = self.matches[n] as f64 / self.totals[n] as f64;
            log_sum += p.max(1e-9).ln();
        }
        let bp = if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        100.0 * bp * (log_sum / MAX_ORDER as f64).exp()
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU: statistics are summed over pairs before scoring.
pub fn corpus_bleu(preds: &[String], refs: &[String]) -> Result<f64, MetricsError> {
    if preds.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            refs: refs.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut total = BleuStats::default();
    for (p, r) in preds.iter().zip(refs) {
        total.add(&BleuStats::of_pair(p, r));
    }
    Ok(total.score())
}
