//! Bilinear reranker: preference ordering, alignment losses, MGDA weighting,
//! training and inference.
//!
//! Parameters are `W` (d x d, row-major) and a bias `b`; every gradient in this
//! module is a flat vector of length `d * d + 1` laid out as `[W.., b]`.

pub mod loss;
pub mod mgda;
pub mod order;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{Hit, QueryRecord};
use crate::store::{self, EmbeddingStore, StoreError};

pub use loss::{pair_loss_grad, point_loss_grad, scl_loss_grad, LossGrad, PairGroup, SclItem, Side, TrainExample};
pub use mgda::{mgda_weights, MgdaResult, TaskWeights};
pub use order::{build_order, fuse_score, make_pairs, normalize_ratings, pairwise_order, PairWinner, PreferenceOrder};
pub use train::{train, HistoryEntry, TrainConfig, TrainSets, Weighting};

#[derive(Debug, thiserror::Error)]
pub enum RerankError {
    #[error("fusion weight {0} outside [0, 1]")]
    FusionWeight(f64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("contrastive batch needs at least 2 items, got {0}")]
    SmallBatch(usize),
    #[error("vector has dimension {found}, model dimension is {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("pair ({0}, {1}) indexes past the group's documents")]
    BadPair(usize, usize),
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("no task gradients")]
    NoTasks,
    #[error("invalid task weights: {0}")]
    BadWeights(String),
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error("no query record for {0}")]
    MissingQuery(String),
    #[error("k must be positive")]
    ZeroK,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("model header {path}: {message}")]
    Header { path: PathBuf, message: String },
}

/// `score(q, d) = qᵀ W d + b`, with the contrastive temperature `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankerModel {
    pub dim: usize,
    pub w: Vec<f64>,
    pub bias: f64,
    pub tau: f64,
}

impl RerankerModel {
    pub fn identity(dim: usize, tau: f64) -> Self {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        Self { dim, w, bias: 0.0, tau }
    }

    pub fn zeros(dim: usize, tau: f64) -> Self {
        Self { dim, w: vec![0.0; dim * dim], bias: 0.0, tau }
    }

    pub fn param_len(&self) -> usize {
        self.dim * self.dim + 1
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.w.clone();
        p.push(self.bias);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_len());
        self.w.copy_from_slice(&p[..self.dim * self.dim]);
        self.bias = p[self.dim * self.dim];
    }

    pub fn validate(&self) -> Result<(), RerankError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(RerankError::BadTemperature(self.tau));
        }
        if self.w.len() != self.dim * self.dim {
            return Err(RerankError::LengthMismatch { left: self.w.len(), right: self.dim * self.dim });
        }
        if self.w.iter().any(|v| !v.is_finite()) || !self.bias.is_finite() {
            return Err(RerankError::BadWeights("model parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn check_dim(&self, v: &[f64]) -> Result<(), RerankError> {
        if v.len() != self.dim {
            return Err(RerankError::DimMismatch { expected: self.dim, found: v.len() });
        }
        Ok(())
    }

    /// `W d`.
    pub fn apply(&self, d: &[f64]) -> Vec<f64> {
        self.w.chunks_exact(self.dim).map(|row| row.iter().zip(d).map(|(a, b)| a * b).sum()).collect()
    }

    /// `Wᵀ q`.
    pub fn apply_t(&self, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (qi, row) in q.iter().zip(self.w.chunks_exact(self.dim)) {
            for (o, wij) in out.iter_mut().zip(row) {
                *o += qi * wij;
            }
        }
        out
    }

    pub fn score(&self, q: &[f64], d: &[f64]) -> f64 {
        q.iter().zip(self.apply(d)).map(|(a, b)| a * b).sum::<f64>() + self.bias
    }
}

pub fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Rescores a query's retrieved documents and keeps the best `k`.
///
/// Ties keep retriever order, so the all-zero model returns the retrieval
/// list truncated to `k`.
pub fn rerank(
    model: &RerankerModel,
    query: &QueryRecord,
    docs: &EmbeddingStore,
    k: usize,
) -> Result<Vec<Hit>, RerankError> {
    if k == 0 {
        return Err(RerankError::ZeroK);
    }
    let q = widen(&query.embedding);
    model.check_dim(&q)?;
    // Wᵀq once, then a dot product per document.
    let wq = model.apply_t(&q);
    let mut scored = Vec::with_capacity(query.retrieved.len());
    for (i, hit) in query.retrieved.iter().enumerate() {
        let d = docs.get(&hit.doc_id)?;
        model.check_dim(&widen(d))?;
        let s = wq.iter().zip(d).map(|(a, &b)| a * b as f64).sum::<f64>() + model.bias + 0.0;
        scored.push((i, s));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(k).map(|(i, s)| Hit::new(query.retrieved[i].doc_id.clone(), s as f32)).collect())
}

/// Sidecar JSON carried next to the weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub dim: usize,
    pub bias: f64,
    pub tau: f64,
    pub config_hash: String,
}

pub fn header_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `W` as a DPAE store (rows `w0..`) and the header as `<stem>.json`.
pub fn save_model(model: &RerankerModel, config_hash: &str, path: &Path) -> Result<(), RerankError> {
    model.validate()?;
    let mut rows = EmbeddingStore::new(model.dim)?;
    for (i, row) in model.w.chunks_exact(model.dim).enumerate() {
        let row32: Vec<f32> = row.iter().map(|&v| v as f32).collect();
        rows.push(format!("w{i}"), &row32)?;
    }
    store::save_store(&rows, path)?;
    let header = ModelHeader { dim: model.dim, bias: model.bias, tau: model.tau, config_hash: config_hash.to_string() };
    let hp = header_path(path);
    let text = serde_json::to_string_pretty(&header).expect("header serializes") + "\n";
    fs::write(&hp, text).map_err(|e| RerankError::Header { path: hp, message: e.to_string() })
}

pub fn load_model(path: &Path) -> Result<(RerankerModel, ModelHeader), RerankError> {
    let rows = store::load_store(path)?;
    let hp = header_path(path);
    let text = fs::read_to_string(&hp).map_err(|e| RerankError::Header { path: hp.clone(), message: e.to_string() })?;
    let header: ModelHeader =
        serde_json::from_str(&text).map_err(|e| RerankError::Header { path: hp.clone(), message: e.to_string() })?;
    if rows.dim() != header.dim || rows.len() != header.dim {
        return Err(RerankError::Header {
            path: hp,
            message: format!("header dim {} but matrix is {}x{}", header.dim, rows.len(), rows.dim()),
        });
    }
    let w = rows.rows().flat_map(|r| r.iter().map(|&v| v as f64)).collect();
    let model = RerankerModel { dim: header.dim, w, bias: header.bias, tau: header.tau };
    model.validate()?;
    Ok((model, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (EmbeddingStore, QueryRecord) {
        let mut s = EmbeddingStore::new(2).unwrap();
        s.push("a", &[1.0, 0.0]).unwrap();
        s.push("b", &[0.5, 0.0]).unwrap();
        s.push("planted", &[0.1, 1.0]).unwrap();
        let mut q = QueryRecord::new("q", "text", vec!["x".into()], vec![1.0, 1.0]);
        q.retrieved = vec![Hit::new("a", 1.0), Hit::new("b", 0.5), Hit::new("planted", 0.3)];
        (s, q)
    }

    #[test]
    fn bilinear_score() {
        let mut m = RerankerModel::zeros(2, 0.1);
        m.w = vec![1.0, 2.0, 3.0, 4.0];
        m.bias = 0.5;
        // [1, 1] · [[1, 2], [3, 4]] · [1, 0] = 1 + 3
        assert_eq!(m.score(&[1.0, 1.0], &[1.0, 0.0]), 4.5);
        assert_eq!(m.apply_t(&[1.0, 1.0]), vec![4.0, 6.0]);
    }

    #[test]
    fn zero_model_keeps_retriever_order() {
        let (s, q) = fixture();
        let top = rerank(&RerankerModel::zeros(2, 0.1), &q, &s, 2).unwrap();
        let ids: Vec<&str> = top.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert!(matches!(rerank(&RerankerModel::zeros(2, 0.1), &q, &s, 0), Err(RerankError::ZeroK)));
    }

    #[test]
    fn planted_doc_promoted() {
        let (s, q) = fixture();
        let mut m = RerankerModel::zeros(2, 0.1);
        m.w[3] = 5.0;
        let top = rerank(&m, &q, &s, 3).unwrap();
        assert_eq!(top[0].doc_id, "planted");
        assert_eq!(top.len(), 3);
    }

    #[test]
    fn model_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reranker.dpae");
        let mut m = RerankerModel::identity(3, 0.07);
        m.w[1] = -0.25;
        m.bias = 0.125;
        save_model(&m, "abc", &path).unwrap();
        let (back, header) = load_model(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.config_hash, "abc");
        assert!(dir.path().join("reranker.json").exists());
    }
}
