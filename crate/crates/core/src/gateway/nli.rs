//! Natural language inference verdicts.

use std::collections::HashSet;

use crate::model::NliLabel;
use crate::text::normalized_tokens;

use super::GatewayError;

/// Label with its probability vector in (entailment, neutral, contradiction) order.
#[derive(Debug, Clone, PartialEq)]
pub struct NliVerdict {
    pub label: NliLabel,
    pub scores: [f64; 3],
}

const ORDER: [NliLabel; 3] = [NliLabel::Entailment, NliLabel::Neutral, NliLabel::Contradiction];

impl NliVerdict {
    /// Softmax over raw (entailment, neutral, contradiction) logits; label is the argmax.
    pub fn from_logits(logits: [f64; 3]) -> Result<Self, GatewayError> {
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(GatewayError::Malformed(format!("non-finite NLI logits {logits:?}")));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps = logits.map(|v| (v - max).exp());
        let z: f64 = exps.iter().sum();
        let scores = exps.map(|e| e / z);
        let best = (0..3).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        Ok(Self { label: ORDER[best], scores })
    }

    pub fn probability(&self, label: NliLabel) -> f64 {
        self.scores[ORDER.iter().position(|l| *l == label).unwrap()]
    }

    /// Probability-vector and argmax invariants.
    pub fn is_consistent(&self) -> bool {
        let sum: f64 = self.scores.iter().sum();
        let argmax_ok = self.scores.iter().all(|&s| s <= self.probability(self.label));
        (sum - 1.0).abs() <= 1e-6 && self.scores.iter().all(|&s| s >= 0.0) && argmax_ok
    }
}

pub trait NliScorer: Send + Sync {
    fn judge(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, GatewayError>;
}

/// Classifies the relation of `hypothesis` to `premise`.
pub fn nli_judge(scorer: &dyn NliScorer, premise: &str, hypothesis: &str) -> Result<NliVerdict, GatewayError> {
    if premise.is_empty() || hypothesis.is_empty() {
        return Err(GatewayError::InvalidRequest("premise and hypothesis must be non-empty".into()));
    }
    scorer.judge(premise, hypothesis)
}

/// Token-Jaccard stand-in for a trained NLI model.
///
/// Jaccard >= `entail_at` is entailment, below `contradict_below` is
/// contradiction, anything else neutral. The chosen label gets probability 0.8
/// and the other two 0.1 each.
#[derive(Debug, Clone, Copy)]
pub struct LexicalNli {
    pub entail_at: f64,
    pub contradict_below: f64,
}

impl Default for LexicalNli {
    fn default() -> Self {
        Self { entail_at: 0.8, contradict_below: 0.2 }
    }
}

pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let a: HashSet<String> = normalized_tokens(a).into_iter().collect();
    let b: HashSet<String> = normalized_tokens(b).into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

impl NliScorer for LexicalNli {
    fn judge(&self, premise: &str, hypothesis: &str) -> Result<NliVerdict, GatewayError> {
        let j = token_jaccard(premise, hypothesis);
        let label = if j >= self.entail_at {
            NliLabel::Entailment
        } else if j < self.contradict_below {
            NliLabel::Contradiction
        } else {
            NliLabel::Neutral
        };
        let scores = ORDER.map(|l| if l == label { 0.8 } else { 0.1 });
        Ok(NliVerdict { label, scores })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lexical_stub_rules() {
        let nli = LexicalNli::default();
        let same = nli_judge(&nli, "who wrote the book", "who wrote the book").unwrap();
        assert_eq!(same.label, NliLabel::Entailment);
        let disjoint = nli_judge(&nli, "who wrote the book", "SELECT ?x WHERE").unwrap();
        assert_eq!(disjoint.label, NliLabel::Contradiction);
        // {red, green, blue} vs {red, green, yellow}: 2 shared of 4 distinct tokens.
        assert_eq!(token_jaccard("red green blue", "red green yellow"), 0.5);
        let half = nli_judge(&nli, "red green blue", "red green yellow").unwrap();
        assert_eq!(half.label, NliLabel::Neutral);
        assert!(half.is_consistent());
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(nli_judge(&LexicalNli::default(), "", "x").is_err());
        assert!(nli_judge(&LexicalNli::default(), "x", "").is_err());
    }

    #[test]
    fn non_finite_logits_rejected() {
        assert!(NliVerdict::from_logits([f64::NAN, 0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_verdicts_are_probability_vectors(e in -50.0..50.0f64, n in -50.0..50.0f64, c in -50.0..50.0f64) {
            let v = NliVerdict::from_logits([e, n, c]).unwrap();
            prop_assert!(v.is_consistent());
        }

        #[test]
        fn stub_verdicts_are_probability_vectors(a in "[a-d ]{1,20}", b in "[a-d ]{1,20}") {
            let v = LexicalNli::default().judge(&a, &b).unwrap();
            prop_assert!(v.is_consistent());
        }
    }
}
