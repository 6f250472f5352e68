//! Exhaustive dot-product retrieval and the fixed-rank document subset.

use crate::model::{Hit, SUBSET_RANKS};
use crate::store::EmbeddingStore;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrievalError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the {count} documents in the store")]
    KTooLarge { k: usize, count: usize },
    #[error("query dimension {query} does not match store dimension {store}")]
    DimMismatch { query: usize, store: usize },
    #[error("hierarchical subset needs 100 hits, got {got} ({} short)", 100 - got)]
    TooFewHits { got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

/// Dot product of two f32 vectors accumulated in f64.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Returns the `k` rows with the largest dot product against `query`,
/// descending, ties broken by ascending row index. Adding `0.0` folds `-0.0`
/// into `0.0` so that `total_cmp` treats them as a tie.
pub fn dense_retrieve(
    query_id: &str,
    query: &[f32],
    store: &EmbeddingStore,
    k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if query.len() != store.dim() {
        return Err(RetrievalError::DimMismatch { query: query.len(), store: store.dim() });
    }
    if k > store.len() {
        return Err(RetrievalError::KTooLarge { k, count: store.len() });
    }
    let mut scored: Vec<(f64, usize)> = store.rows().enumerate().map(|(i, row)| (dot(query, row) + 0.0, i)).collect();
    let by_score = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_score);
        scored.truncate(k);
    }
    scored.sort_unstable_by(by_score);
    let hits = scored.into_iter().map(|(s, i)| Hit::new(store.id(i), s as f32)).collect();
    Ok(RetrievalResult { query_id: query_id.to_string(), hits })
}

/// Picks the hits at 1-based ranks 1, 25, 50 and 100.
pub fn hierarchical_subset(hits: &[Hit]) -> Result<Vec<(u32, &Hit)>, RetrievalError> {
    if hits.len() < 100 {
        return Err(RetrievalError::TooFewHits { got: hits.len() });
    }
    Ok(SUBSET_RANKS.iter().map(|&r| (r, &hits[r as usize - 1])).collect())
}
