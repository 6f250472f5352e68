//! Top-k retrieval against a full sort of the store, and reranking edge cases.

use dpa_core::model::{Hit, QueryRecord};
use dpa_core::rerank::{rerank, RerankerModel};
use dpa_core::retrieval::{dense_retrieve, RetrievalError};
use dpa_oracles::{full_sort_retrieve, random_store, rng};
use rand::Rng;

#[test]
fn top_k_matches_full_sort() {
    for seed in 0..200 {
        let mut r = rng(seed);
        let n = r.random_range(1..=2000);
        let dim = r.random_range(1..=64);
        let ties = seed % 2 == 0;
        let store = random_store(&mut r, n, dim, ties);
        let query: Vec<f32> = if ties {
            (0..dim).map(|_| r.random_range(-1i8..=1) as f32).collect()
        } else {
            (0..dim).map(|_| r.random_range(-1.0f32..1.0)).collect()
        };
        let k = r.random_range(1..=n);
        let got = dense_retrieve("q", &query, &store, k).unwrap().hits;
        let want = full_sort_retrieve(&query, &store);
        assert_eq!(got.len(), k);
        for (h, (row, score)) in got.iter().zip(&want) {
            assert_eq!(h.doc_id, store.id(*row), "seed {seed}");
            assert_eq!(h.score, *score as f32, "seed {seed}");
        }
    }
}

#[test]
fn argument_errors() {
    let store = random_store(&mut rng(1), 5, 3, false);
    assert_eq!(dense_retrieve("q", &[0.0; 3], &store, 0).unwrap_err(), RetrievalError::ZeroK);
    assert_eq!(dense_retrieve("q", &[0.0; 3], &store, 6).unwrap_err(), RetrievalError::KTooLarge { k: 6, count: 5 });
    assert_eq!(
        dense_retrieve("q", &[0.0; 2], &store, 1).unwrap_err(),
        RetrievalError::DimMismatch { query: 2, store: 3 }
    );
}

#[test]
fn zero_model_keeps_retriever_order() {
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let dim = r.random_range(1..=16);
        let store = random_store(&mut r, 300, dim, false);
        let embedding: Vec<f32> = (0..dim).map(|_| r.random_range(-1.0f32..1.0)).collect();
        let mut q = QueryRecord::new("q", "text", vec!["a".into()], embedding);
        q.retrieved = dense_retrieve("q", &q.embedding, &store, 100).unwrap().hits;
        let k = r.random_range(1..=100);
        let got = rerank(&RerankerModel::zeros(dim, 0.07), &q, &store, k).unwrap();
        let ids: Vec<&str> = got.iter().map(|h| h.doc_id.as_str()).collect();
        let want: Vec<&str> = q.retrieved[..k].iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, want);
    }
}

#[test]
fn identity_model_reproduces_retrieval_scores() {
    let mut r = rng(7);
    let store = random_store(&mut r, 200, 8, false);
    let embedding: Vec<f32> = (0..8).map(|_| r.random_range(-1.0f32..1.0)).collect();
    let mut q = QueryRecord::new("q", "text", vec!["a".into()], embedding);
    q.retrieved = dense_retrieve("q", &q.embedding, &store, 50).unwrap().hits;
    let got = rerank(&RerankerModel::identity(8, 0.07), &q, &store, 50).unwrap();
    let ids = |h: &[Hit]| h.iter().map(|h| h.doc_id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&got), ids(&q.retrieved));
    for (a, b) in got.iter().zip(&q.retrieved) {
        assert!((a.score - b.score).abs() <= 1e-5 * b.score.abs().max(1.0));
    }
}
