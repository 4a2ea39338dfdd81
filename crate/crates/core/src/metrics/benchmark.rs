use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TOKENIZER_VERSION;
use super::{corpus_bleu, skeleton_of, structure_accuracy, MetricsError, StructureScore};
use crate::sell;

/// One line of a prediction or test-set file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub id: String,
    #[serde(default)]
    pub demand: String,
    #[serde(default)]
    pub sell: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub demand: String,
    pub prediction: String,
    pub reference: String,
    pub structure: StructureScore,
    pub parse_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub overall_bleu: f64,
    pub mean_l: f64,
    pub mean_ro: f64,
    pub mean_structure: f64,
    pub parse_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub bleu_tokenizer: String,
    pub bleu_level: String,
    pub bleu_smoothing: String,
    pub structure_fallback: String,
}

impl Default for ReportMetadata {
    fn default() -> Self {
        ReportMetadata {
            bleu_tokenizer: TOKENIZER_VERSION.to_string(),
            bleu_level: "corpus".to_string(),
            bleu_smoothing: "none; any zero n-gram precision scores 0".to_string(),
            structure_fallback: "regex skeleton for unparseable predictions".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub items: Vec<BenchmarkItem>,
    pub aggregates: Aggregates,
    pub metadata: ReportMetadata,
}

/// Scores predictions against the test set, in test-set order.
pub fn evaluate_benchmark(
    predictions: &[BenchRecord],
    testset: &[BenchRecord],
) -> Result<BenchmarkReport, MetricsError> {
    if testset.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut by_id: HashMap<&str, &BenchRecord> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(MetricsError::DuplicateId(p.id.clone()));
        }
    }
    let mut pairs = Vec::with_capacity(testset.len());
    for gold in testset {
        sell::parse(&gold.sell).map_err(|source| MetricsError::BadReference {
            id: gold.id.clone(),
            source,
        })?;
        let pred = by_id
            .get(gold.id.as_str())
            .ok_or_else(|| MetricsError::MissingPrediction(gold.id.clone()))?;
        pairs.push((*pred, gold));
    }

    let items: Vec<BenchmarkItem> = pairs
        .par_iter()
        .map(|(pred, gold)| BenchmarkItem {
            id: gold.id.clone(),
            demand: gold.demand.clone(),
            prediction: pred.sell.clone(),
            reference: gold.sell.clone(),
            structure: structure_accuracy(&pred.sell, &gold.sell),
            parse_ok: skeleton_of(&pred.sell).1,
        })
        .collect();

    let preds: Vec<String> = items.iter().map(|i| i.prediction.clone()).collect();
    let refs: Vec<String> = items.iter().map(|i| i.reference.clone()).collect();
    let n = items.len() as f64;
    let mean = |f: &dyn Fn(&BenchmarkItem) -> f64| items.iter().map(f).sum::<f64>() / n;
    let aggregates = Aggregates {
        overall_bleu: corpus_bleu(&preds, &refs)?,
        mean_l: mean(&|i| i.structure.l),
        mean_ro: mean(&|i| i.structure.ro),
        mean_structure: mean(&|i| i.structure.mean),
        parse_rate: mean(&|i| if i.parse_ok { 1.0 } else { 0.0 }),
    };
    Ok(BenchmarkReport {
        items,
        aggregates,
        metadata: ReportMetadata::default(),
    })
}

impl BenchmarkReport {
    /// Plain-text table: one row per item then the aggregate row.
    pub fn to_table(&self) -> String {
        let id_width = self
            .items
            .iter()
            .map(|i| i.id.chars().count())
            .chain(["overall".len(), "id".len()])
            .max()
            .unwrap_or(2);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<id_width$}  {:>6}  {:>5}  {:>5}  {:>5}  {:>5}",
            "id", "S-BLEU", "L", "R/O", "Mean", "Parse"
        );
        for i in &self.items {
            let _ = writeln!(
                out,
                "{:<id_width$}  {:>6}  {:>5.3}  {:>5.3}  {:>5.3}  {:>5}",
                i.id,
                "-",
                i.structure.l,
                i.structure.ro,
                i.structure.mean,
                if i.parse_ok { "yes" } else { "no" }
            );
        }
        let a = &self.aggregates;
        let _ = writeln!(
            out,
            "{:<id_width$}  {:>6.1}  {:>5.3}  {:>5.3}  {:>5.3}  {:>5.3}",
            "overall", a.overall_bleu, a.mean_l, a.mean_ro, a.mean_structure, a.parse_rate
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, sell: &str) -> BenchRecord {
        BenchRecord {
            id: id.into(),
            demand: format!("demand {id}"),
            sell: sell.into(),
        }
    }

    #[test]
    fn single_identical_item_is_perfect() {
        let t = vec![rec(
            "1",
            "(Gender#Belongs To#Female) AND (User Age Group#Between#18,35)",
        )];
        let r = evaluate_benchmark(&t, &t).unwrap();
        assert!((r.aggregates.overall_bleu - 100.0).abs() < 1e-9);
        assert_eq!(r.aggregates.mean_structure, 1.0);
        assert_eq!(r.aggregates.parse_rate, 1.0);
        assert!(r.to_table().contains("overall"));
    }

    #[test]
    fn empty_prediction_lowers_parse_rate() {
        let t = vec![
            rec(
                "1",
                "(Gender#Belongs To#Female) AND (User Age Group#Between#18,35)",
            ),
            rec("2", "(Pet Owning#Belongs To#True)"),
        ];
        let p = vec![t[0].clone(), rec("2", "")];
        let r = evaluate_benchmark(&p, &t).unwrap();
        assert_eq!(r.aggregates.parse_rate, 0.5);
        assert!(!r.items[1].parse_ok);
    }

    #[test]
    fn schema_errors() {
        let t = vec![rec("1", "(A#Belongs To#B)")];
        assert!(matches!(
            evaluate_benchmark(&[], &t),
            Err(MetricsError::MissingPrediction(_))
        ));
        let bad = vec![rec("1", "not sell")];
        assert!(matches!(
            evaluate_benchmark(&t, &bad),
            Err(MetricsError::BadReference { .. })
        ));
        let dup = vec![t[0].clone(), t[0].clone()];
        assert!(matches!(
            evaluate_benchmark(&dup, &t),
            Err(MetricsError::DuplicateId(_))
        ));
    }
}
