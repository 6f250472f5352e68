//! Planted-signal corpus for offline end-to-end runs.
//!
//! Every query has one answer-bearing document. Query and answer document
//! share a random direction in a block of hidden coordinates that no other
//! document uses; the visible coordinates are tuned so that plain dot-product
//! retrieval puts the answer document at a chosen rank. Dot-product retrieval
//! therefore cannot tell the answer document apart, while a trained bilinear
//! reranker can learn to weight the hidden block.
//!
//! Texts are written for [`crate::gateway::mock::PromptMock`]: the answer
//! document and some distractors contain an `answer is X` statement, the rest
//! contain none.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::eval::TagRecord;
use crate::model::{Document, Extra, QueryRecord, SUBSET_RANKS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_docs: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    /// Trailing coordinates reserved for the planted signal.
    pub hidden: usize,
    /// Scale of the hidden block in query embeddings.
    pub hidden_scale: f64,
    /// Share of training queries the mock reader answers without documents.
    pub memorized_fraction: f64,
    /// Share of distractor documents that state a (wrong) answer.
    pub statement_fraction: f64,
    /// Share of training queries whose answer document sits at a sampled rank.
    pub subset_rank_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_docs: 1000,
            n_train: 200,
            n_test: 50,
            dim: 32,
            hidden: 8,
            hidden_scale: 0.3,
            memorized_fraction: 0.3,
            statement_fraction: 0.5,
            subset_rank_fraction: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub docs: Vec<Document>,
    pub train: Vec<QueryRecord>,
    pub test: Vec<QueryRecord>,
    /// Query text to answer for the queries the mock reader knows by heart.
    pub memory: BTreeMap<String, String>,
    pub tags: Vec<TagRecord>,
    /// Query id to the retrieval rank of its answer document.
    pub answer_ranks: BTreeMap<String, usize>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid synthetic config: {0}")]
pub struct SyntheticError(String);

const TAG_VOCAB: [&str; 10] =
    ["lookup", "code", "registry", "entity", "identifier", "catalog", "topic", "reference", "index", "archive"];
const DEPTH: usize = 100;

pub fn answer_for(i: usize) -> String {
    format!("zq{i:04}k")
}

pub fn query_text(i: usize) -> String {
    format!("which code belongs to topic t{i:04}")
}

fn gaussian(rng: &mut Xoshiro256PlusPlus, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn dot32(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData, SyntheticError> {
    let n_queries = config.n_train + config.n_test;
    let visible = config.dim.checked_sub(config.hidden).filter(|v| *v > 0);
    let Some(visible) = visible else {
        return Err(SyntheticError(format!("hidden {} must be below dim {}", config.hidden, config.dim)));
    };
    if config.hidden == 0 {
        return Err(SyntheticError("hidden block must be non-empty".into()));
    }
    if config.n_docs < n_queries + DEPTH {
        return Err(SyntheticError(format!("need at least {} documents", n_queries + DEPTH)));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
    let beta = config.hidden_scale;

    // Queries: a visible unit direction plus a scaled hidden unit direction.
    let mut u = Vec::with_capacity(n_queries);
    let mut h = Vec::with_capacity(n_queries);
    let mut q_emb = Vec::with_capacity(n_queries);
    for _ in 0..n_queries {
        let ui = unit(gaussian(&mut rng, visible, 1.0));
        let hi = unit(gaussian(&mut rng, config.hidden, 1.0));
        let mut e = ui.clone();
        e.extend(hi.iter().map(|x| x * beta));
        u.push(ui);
        h.push(hi);
        q_emb.push(to_f32(&e));
    }

    // Answer documents carry the query's hidden direction; their visible part
    // is set below. Distractors are visible noise with an empty hidden block.
    let mut emb: Vec<Vec<f32>> = Vec::with_capacity(config.n_docs);
    let mut noise = Vec::with_capacity(n_queries);
    for hi in &h {
        let w = gaussian(&mut rng, visible, 0.5 / (visible as f64).sqrt());
        let mut e = w.clone();
        e.extend(hi);
        noise.push(w);
        emb.push(to_f32(&e));
    }
    for _ in n_queries..config.n_docs {
        let mut e = gaussian(&mut rng, visible, 1.0 / (visible as f64).sqrt());
        e.extend(std::iter::repeat_n(0.0, config.hidden));
        emb.push(to_f32(&e));
    }

    let mut targets = Vec::with_capacity(n_queries);
    for i in 0..n_queries {
        let r = if i < config.n_train {
            if rng.random_bool(config.subset_rank_fraction) {
                SUBSET_RANKS[rng.random_range(0..SUBSET_RANKS.len())] as usize
            } else {
                loop {
                    let r = rng.random_range(2..DEPTH);
                    if !SUBSET_RANKS.contains(&(r as u32)) {
                        break r;
                    }
                }
            }
        } else {
            rng.random_range(1..=DEPTH)
        };
        targets.push(r);
    }

    // Answer documents move each other's scores, so settle the visible scales
    // by repeated passes until every answer document sits at its target rank.
    let mut ranks = vec![0; n_queries];
    for _ in 0..60 {
        for i in 0..n_queries {
            let mut others: Vec<f64> =
                (0..config.n_docs).filter(|&j| j != i).map(|j| dot32(&q_emb[i], &emb[j])).collect();
            let r = targets[i];
            // Exactly r - 1 other documents must score higher.
            others.select_nth_unstable_by(r - 1, |a, b| b.total_cmp(a));
            let below = others[r - 1];
            let above =
                if r == 1 { below + 0.1 } else { others[..r - 1].iter().cloned().fold(f64::INFINITY, f64::min) };
            let goal = 0.5 * (above + below);
            let base: f64 = u[i].iter().zip(&noise[i]).map(|(a, b)| a * b).sum::<f64>() + beta;
            let a = goal - base;
            let mut e: Vec<f64> = u[i].iter().zip(&noise[i]).map(|(ui, wi)| a * ui + wi).collect();
            e.extend(&h[i]);
            emb[i] = to_f32(&e);
        }
        for i in 0..n_queries {
            let own = dot32(&q_emb[i], &emb[i]);
            ranks[i] = 1
                + (0..config.n_docs)
                    .filter(|&j| j != i)
                    .filter(|&j| {
                        let s = dot32(&q_emb[i], &emb[j]);
                        s > own || (s == own && j < i)
                    })
                    .count();
        }
        if ranks == targets {
            break;
        }
    }

    let mut docs = Vec::with_capacity(config.n_docs);
    for (j, e) in emb.into_iter().enumerate() {
        let (title, text) = if j < n_queries {
            (
                format!("Topic t{j:04}"),
                format!("Registry entry for topic t{j:04}: the code is listed. The answer is {}.", answer_for(j)),
            )
        } else if rng.random_bool(config.statement_fraction) {
            (
                format!("Topic t{j:04}"),
                format!("Registry entry for topic t{j:04}: the code is listed. The answer is zx{j:04}k."),
            )
        } else {
            (format!("Archive {j:04}"), format!("Archive note {j:04} without a listed code."))
        };
        docs.push(Document::new(format!("doc{j:04}"), title, text, e));
    }

    let mut train = Vec::with_capacity(config.n_train);
    let mut test = Vec::with_capacity(config.n_test);
    let mut memory = BTreeMap::new();
    let mut tags = Vec::new();
    let mut answer_ranks = BTreeMap::new();
    for (i, e) in q_emb.into_iter().enumerate() {
        let is_train = i < config.n_train;
        let id = if is_train { format!("train{i:04}") } else { format!("test{:04}", i - config.n_train) };
        let record = QueryRecord::new(id.clone(), query_text(i), vec![answer_for(i)], e);
        if is_train && rng.random_bool(config.memorized_fraction) {
            memory.insert(record.query.clone(), answer_for(i));
        }
        if is_train {
            let n = rng.random_range(1..=3);
            let mut t: Vec<String> = Vec::new();
            while t.len() < n {
                let tag = TAG_VOCAB[rng.random_range(0..TAG_VOCAB.len())].to_string();
                if !t.contains(&tag) {
                    t.push(tag);
                }
            }
            tags.push(TagRecord { query_id: id.clone(), tags: t, extra: Extra::new() });
        }
        answer_ranks.insert(id, ranks[i]);
        if is_train {
            train.push(record);
        } else {
            test.push(record);
        }
    }
    Ok(SyntheticData { docs, train, test, memory, tags, answer_ranks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::dense_retrieve;
    use crate::store::EmbeddingStore;

    #[test]
    fn answer_documents_land_on_target_ranks() {
        let config = SyntheticConfig { n_docs: 300, n_train: 40, n_test: 10, ..Default::default() };
        let data = generate(&config).unwrap();
        let store = EmbeddingStore::from_documents(config.dim, &data.docs).unwrap();
        let mut at_subset = 0;
        for (i, q) in data.train.iter().chain(&data.test).enumerate() {
            let hits = dense_retrieve(&q.query_id, &q.embedding, &store, 100).unwrap().hits;
            let rank = hits.iter().position(|h| h.doc_id == format!("doc{i:04}")).map(|p| p + 1);
            assert_eq!(rank, Some(data.answer_ranks[&q.query_id]), "{}", q.query_id);
            if i < config.n_train && SUBSET_RANKS.contains(&(rank.unwrap() as u32)) {
                at_subset += 1;
            }
        }
        assert!(at_subset >= 20, "{at_subset}");
    }

    #[test]
    fn deterministic() {
        let config = SyntheticConfig { n_docs: 200, n_train: 20, n_test: 5, ..Default::default() };
        assert_eq!(generate(&config).unwrap(), generate(&config).unwrap());
    }
}
