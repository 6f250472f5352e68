//! Answer metrics, the four-category outcome report and tag statistics.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::model::{Extra, PreferenceLabel, Record};
use crate::prefdata::categorize;
use crate::text::{judge_answer, normalized_tokens};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("cannot report on an empty set of queries")]
    Empty,
}

/// 1 when the prediction contains a gold answer after normalization.
pub fn hit_at_1(prediction: &str, golds: &[String]) -> u8 {
    u8::from(judge_answer(prediction, golds))
}

fn f1_single(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Multiset token-overlap F1 after normalization, maximized over the golds.
pub fn token_f1(prediction: &str, golds: &[String]) -> f64 {
    let pred = normalized_tokens(prediction);
    golds.iter().map(|g| f1_single(&pred, &normalized_tokens(g))).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub label: PreferenceLabel,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub total: usize,
    pub rows: Vec<CategoryRow>,
}

impl CategoryReport {
    pub fn count(&self, label: PreferenceLabel) -> usize {
        self.rows.iter().find(|r| r.label == label).map_or(0, |r| r.count)
    }
}

/// Counts (answer without documents correct, answer with documents correct) pairs per category.
pub fn category_report(outcomes: &[(bool, bool)]) -> Result<CategoryReport, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::Empty);
    }
    let total = outcomes.len();
    let rows = PreferenceLabel::ALL
        .iter()
        .map(|&label| {
            let count = outcomes.iter().filter(|(d, r)| categorize(*d, *r) == label).count();
            CategoryRow { label, count, percent: 100.0 * count as f64 / total as f64 }
        })
        .collect();
    Ok(CategoryReport { total, rows })
}

/// Reader replies for one evaluation query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub query_id: String,
    pub gold_answers: Vec<String>,
    /// Reply without documents.
    pub direct: String,
    /// Reply over the retriever's top-k.
    pub retriever: String,
    /// Reply over the reranked top-k.
    pub reranked: String,
    #[serde(flatten, default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: Extra,
}

impl Record for Prediction {
    fn extra(&self) -> &Extra {
        &self.extra
    }
}

/// Hit@1 and token F1 averaged over a set of replies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub hit_at_1: f64,
    pub f1: f64,
}

pub fn mean_scores<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a [String])>) -> Result<Scores, EvalError> {
    let (mut n, mut hits, mut f1) = (0usize, 0u64, 0.0);
    for (reply, golds) in pairs {
        n += 1;
        hits += u64::from(hit_at_1(reply, golds));
        f1 += token_f1(reply, golds);
    }
    if n == 0 {
        return Err(EvalError::Empty);
    }
    Ok(Scores { hit_at_1: hits as f64 / n as f64, f1: f1 / n as f64 })
}

/// Externally produced tag annotation of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRecord {
    pub query_id: String,
    pub tags: Vec<String>,
    #[serde(flatten, default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: Extra,
}

impl Record for TagRecord {
    fn extra(&self) -> &Extra {
        &self.extra
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagMetrics {
    /// Tags per sample.
    pub complexity: f64,
    /// Distinct tags per sample.
    pub diversity: f64,
}

pub fn tag_metrics<S: AsRef<str>>(samples: &[Vec<S>]) -> Result<TagMetrics, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = samples.len() as f64;
    let total: usize = samples.iter().map(Vec::len).sum();
    let unique: HashSet<&str> = samples.iter().flatten().map(AsRef::as_ref).collect();
    Ok(TagMetrics { complexity: total as f64 / n, diversity: unique.len() as f64 / n })
}

/// Aligned-text rendering of the category table.
pub fn render_category_table(report: &CategoryReport) -> String {
    let mut out = format!("{:<20} {:>7} {:>9}\n", "category", "count", "percent");
    for r in &report.rows {
        out.push_str(&format!("{:<20} {:>7} {:>8.2}%\n", r.label.as_str(), r.count, r.percent));
    }
    out.push_str(&format!("{:<20} {:>7}\n", "total", report.total));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn hit_cases() {
        assert_eq!(hit_at_1("Vancouver", &g(&["Vancouver"])), 1);
        assert_eq!(hit_at_1("Mawenzi", &g(&["Kilimanjaro"])), 0);
        assert_eq!(hit_at_1("Mount Kilimanjaro", &g(&["Kilimanjaro"])), 1);
    }

    #[test]
    fn f1_cases() {
        assert_eq!(token_f1("same words here", &g(&["same words here"])), 1.0);
        assert_eq!(token_f1("alpha beta", &g(&["gamma delta"])), 0.0);
        assert!((token_f1("the cat sat", &g(&["cat sat down"])) - 0.8).abs() < 1e-12);
        assert_eq!(token_f1("", &g(&["the"])), 1.0);
        assert_eq!(token_f1("", &g(&["x"])), 0.0);
        assert_eq!(token_f1("a b", &g(&["zzz", "b"])), 1.0);
        // Repeated tokens count once per occurrence.
        assert!((token_f1("x x y", &g(&["x y y"])) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn category_cases() {
        let r = category_report(&[(true, true), (false, true), (true, false), (false, false)]).unwrap();
        assert!(r.rows.iter().all(|row| row.count == 1 && row.percent == 25.0));
        assert_eq!(category_report(&[]).unwrap_err(), EvalError::Empty);
        let table = render_category_table(&r);
        assert!(table.contains("AlignedKnowledge"));
    }

    #[test]
    fn mean_scores_average() {
        let golds = g(&["paris"]);
        let s = mean_scores([("Paris", golds.as_slice()), ("Lyon", golds.as_slice())]).unwrap();
        assert_eq!(s, Scores { hit_at_1: 0.5, f1: 0.5 });
        assert!(mean_scores(std::iter::empty()).is_err());
    }

    #[test]
    fn tag_cases() {
        let m = tag_metrics(&[vec!["a", "b"], vec!["a"], vec!["c"]]).unwrap();
        assert_eq!(m.complexity, 4.0 / 3.0);
        assert_eq!(m.diversity, 1.0);
        let same: Vec<Vec<&str>> = vec![vec!["t"]; 10];
        let m = tag_metrics(&same).unwrap();
        assert_eq!((m.complexity, m.diversity), (1.0, 0.1));
        assert!(tag_metrics::<&str>(&[]).is_err());
    }
}
