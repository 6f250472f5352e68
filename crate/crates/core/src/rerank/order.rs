//! Preference score fusion and ordering.
//!
//! Candidates are always passed in retriever-rank order, so "ties broken by
//! retriever rank" means ties broken by ascending index.

use super::RerankError;

/// Fused scores and the induced order (0-based candidate indices, best first).
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceOrder {
    pub scores: Vec<f64>,
    pub order: Vec<usize>,
}

impl PreferenceOrder {
    /// Sorts candidate indices by descending score, stable on index; `-0.0`
    /// is folded into `0.0` first.
    pub fn from_scores(mut scores: Vec<f64>) -> Self {
        scores.iter_mut().for_each(|s| *s += 0.0);
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
        Self { scores, order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// The order as 1-based positions.
    pub fn one_based(&self) -> Vec<usize> {
        self.order.iter().map(|i| i + 1).collect()
    }
}

/// `a * r + (1 - a) * s_r`.
pub fn fuse_score(llm_score: f64, retriever_score: f64, a: f64) -> Result<f64, RerankError> {
    if !(0.0..=1.0).contains(&a) {
        return Err(RerankError::FusionWeight(a));
    }
    Ok(a * llm_score + (1.0 - a) * retriever_score)
}

/// Min-max scales ratings into [0, 1]; a constant vector maps to 0.5 everywhere.
pub fn normalize_ratings(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; scores.len()];
    }
    scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
}

pub fn build_order(llm_scores: &[f64], retriever_scores: &[f64], a: f64) -> Result<PreferenceOrder, RerankError> {
    if llm_scores.len() != retriever_scores.len() {
        return Err(RerankError::LengthMismatch { left: llm_scores.len(), right: retriever_scores.len() });
    }
    let fused =
        llm_scores.iter().zip(retriever_scores).map(|(&r, &s)| fuse_score(r, s, a)).collect::<Result<Vec<_>, _>>()?;
    Ok(PreferenceOrder::from_scores(fused))
}

/// Outcome of comparing candidate `i` (shown as A) against candidate `j` (shown as B).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairWinner {
    First,
    Second,
}

/// Copeland ranking over all C(k, 2) comparisons; `scores` hold win counts.
pub fn pairwise_order<E>(
    k: usize,
    mut compare: impl FnMut(usize, usize) -> Result<PairWinner, E>,
) -> Result<PreferenceOrder, E> {
    let mut wins = vec![0.0; k];
    for i in 0..k {
        for j in i + 1..k {
            match compare(i, j)? {
                PairWinner::First => wins[i] += 1.0,
                PairWinner::Second => wins[j] += 1.0,
            }
        }
    }
    Ok(PreferenceOrder::from_scores(wins))
}

/// All (winner, loser) index pairs implied by the order.
pub fn make_pairs(order: &PreferenceOrder) -> Vec<(usize, usize)> {
    pairs_from_order(&order.order)
}

pub fn pairs_from_order(order: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(order.len() * order.len().saturating_sub(1) / 2);
    for (p, &w) in order.iter().enumerate() {
        for &l in &order[p + 1..] {
            out.push((w, l));
        }
    }
    out
}
