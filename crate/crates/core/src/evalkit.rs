//! Ground-truth quality evaluation: answer normalization and token-level F1.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::error::{Error, Result};

/// A quality score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
pub struct QualityScore(f64);

impl QualityScore {
    pub const ZERO: QualityScore = QualityScore(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Domain(format!("quality {value} outside [0, 1]")));
        }
        Ok(QualityScore(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Scores a response against one or more reference answers.
pub trait QualityEvaluator: Send + Sync {
    fn name(&self) -> &'static str;
    fn score(&self, response: &str, truths: &[String]) -> Result<QualityScore>;
}

/// Token-level F1 with max over references.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenF1;

impl QualityEvaluator for TokenF1 {
    fn name(&self) -> &'static str {
        "f1"
    }

    fn score(&self, response: &str, truths: &[String]) -> Result<QualityScore> {
        f1_score(response, truths)
    }
}

/// Quality evaluators keyed by name.
pub struct EvaluatorRegistry {
    evaluators: BTreeMap<String, Arc<dyn QualityEvaluator>>,
}

impl Default for EvaluatorRegistry {
    fn default() -> Self {
        let mut reg = EvaluatorRegistry {
            evaluators: BTreeMap::new(),
        };
        reg.register(Arc::new(TokenF1));
        reg
    }
}

impl EvaluatorRegistry {
    pub fn register(&mut self, evaluator: Arc<dyn QualityEvaluator>) {
        self.evaluators.insert(evaluator.name().to_string(), evaluator);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn QualityEvaluator>> {
        self.evaluators
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "evaluator",
                name: name.to_string(),
                known: self.evaluators.keys().cloned().collect::<Vec<_>>().join(", "),
            })
    }
}

/// Lowercase, drop ASCII punctuation, collapse whitespace runs, trim.
pub fn normalize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        let cleaned: String = word
            .chars()
            .filter(|c| !c.is_ascii_punctuation())
            .flat_map(char::to_lowercase)
            .collect();
        if cleaned.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&cleaned);
    }
    out
}

/// F1 between two already-normalized token sequences, using multiset overlap.
fn f1_tokens(response: &[&str], truth: &[&str]) -> f64 {
    if response.is_empty() || truth.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for tok in truth {
        *counts.entry(tok).or_default() += 1;
    }
    let mut common = 0usize;
    for tok in response {
        if let Some(c) = counts.get_mut(tok) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / response.len() as f64;
    let recall = common as f64 / truth.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token F1 of `response` against a single reference.
pub fn f1_single(response: &str, truth: &str) -> f64 {
    let r = normalize_text(response);
    let g = normalize_text(truth);
    let r: Vec<&str> = r.split(' ').filter(|t| !t.is_empty()).collect();
    let g: Vec<&str> = g.split(' ').filter(|t| !t.is_empty()).collect();
    f1_tokens(&r, &g)
}

/// Maximum token F1 of `response` over all `truths`.
pub fn f1_score(response: &str, truths: &[String]) -> Result<QualityScore> {
    if truths.is_empty() {
        return Err(Error::EmptyTruthList);
    }
    let r = normalize_text(response);
    let r: Vec<&str> = r.split(' ').filter(|t| !t.is_empty()).collect();
    let best = truths
        .iter()
        .map(|t| {
            let g = normalize_text(t);
            let g: Vec<&str> = g.split(' ').filter(|t| !t.is_empty()).collect();
            f1_tokens(&r, &g)
        })
        .fold(0.0, f64::max);
    // min() guards against 1.0000000000000002 from the harmonic mean
    QualityScore::new(best.min(1.0))
}
