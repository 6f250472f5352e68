//! Joint training of the three alignment losses with plain SGD.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::loss::{pair_loss_grad, point_loss_grad, scl_loss_grad, LossGrad, PairGroup, SclItem, Side, TrainExample};
use super::mgda::{combine, mgda_weights, TaskWeights};
use super::order::pairs_from_order;
use super::{widen, RerankError, RerankerModel};
use crate::model::{PreferenceLabel, PreferenceSample, QueryRecord};
use crate::store::EmbeddingStore;

pub const TASKS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// Min-norm weights recomputed every `mgda_every` steps.
    Mgda,
    /// Constant (point, pair, contrastive) weights.
    Fixed([f64; TASKS]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    #[default]
    Identity,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub mgda_every: usize,
    pub weighting: Weighting,
    pub init: Init,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            learning_rate: 0.05,
            epochs: 10,
            batch_size: 32,
            tau: 0.07,
            mgda_every: 1,
            weighting: Weighting::Mgda,
            init: Init::Identity,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if self.mgda_every == 0 {
            return Err("mgda_every must be positive".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(format!("tau must be positive, got {}", self.tau));
        }
        if let Weighting::Fixed(c) = &self.weighting {
            TaskWeights::new(c.to_vec()).map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    pub fn initial_model(&self, dim: usize) -> RerankerModel {
        match self.init {
            Init::Identity => RerankerModel::identity(dim, self.tau),
            Init::Zeros => RerankerModel::zeros(dim, self.tau),
        }
    }
}

/// Training material for the three tasks.
///
/// Each contrastive group holds one query with its documents; labels are local
/// to the group and are made globally distinct when groups share a batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainSets {
    pub point: Vec<TrainExample>,
    pub pair: Vec<PairGroup>,
    pub scl: Vec<Vec<SclItem>>,
}

impl TrainSets {
    /// Builds the task sets from preference samples.
    ///
    /// * point: every aligned (label 1) and unaligned (label 0) document.
    /// * pair: all four subset documents ordered by `preference_order`.
    /// * contrastive: the query and its aligned documents share a label;
    ///   unaligned documents each get a label of their own.
    pub fn from_samples(
        samples: &[PreferenceSample],
        queries: &HashMap<String, QueryRecord>,
        docs: &EmbeddingStore,
    ) -> Result<Self, RerankError> {
        let mut sets = TrainSets::default();
        for s in samples {
            let query = queries.get(&s.query_id).ok_or_else(|| RerankError::MissingQuery(s.query_id.clone()))?;
            let q = widen(&query.embedding);
            let mut vecs = Vec::with_capacity(s.subset.len());
            for e in &s.subset {
                vecs.push(widen(docs.get(&e.doc_id)?));
            }

            let mut group = vec![SclItem { v: q.clone(), side: Side::Query, label: 0 }];
            let mut next_label = 1;
            for (e, d) in s.subset.iter().zip(&vecs) {
                let label = match e.label {
                    PreferenceLabel::AlignedKnowledge => 1,
                    PreferenceLabel::UnalignedKnowledge => 0,
                    _ => continue,
                };
                sets.point.push(TrainExample {
                    query_id: s.query_id.clone(),
                    doc_id: e.doc_id.clone(),
                    q: q.clone(),
                    d: d.clone(),
                    label,
                });
                let scl_label = if label == 1 {
                    0
                } else {
                    next_label += 1;
                    next_label - 1
                };
                group.push(SclItem { v: d.clone(), side: Side::Doc, label: scl_label });
            }
            sets.scl.push(group);

            if !s.preference_order.is_empty() {
                let order: Vec<usize> = s.preference_order.iter().map(|p| p - 1).collect();
                sets.pair.push(PairGroup {
                    query_id: s.query_id.clone(),
                    q,
                    docs: vecs,
                    pairs: pairs_from_order(&order),
                });
            }
        }
        Ok(sets)
    }

    fn sizes(&self) -> [usize; TASKS] {
        [self.point.len(), self.pair.len(), self.scl.len()]
    }
}

/// One optimizer step; absent losses belong to tasks with no data in the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub epoch: usize,
    pub point_loss: Option<f64>,
    pub pair_loss: Option<f64>,
    pub scl_loss: Option<f64>,
    pub weights: [f64; TASKS],
    pub degenerate: bool,
}

fn cyclic_batch<'a, T>(items: &'a [T], perm: &[usize], step: usize, bs: usize) -> Vec<&'a T> {
    let n = items.len();
    let take = bs.min(n);
    (0..take).map(|j| &items[perm[(step * take + j) % n]]).collect()
}

fn scl_batch(groups: &[&Vec<SclItem>]) -> Vec<SclItem> {
    let mut out = Vec::new();
    let mut offset = 0;
    for g in groups {
        let width = g.iter().map(|it| it.label + 1).max().unwrap_or(0);
        out.extend(g.iter().map(|it| SclItem { label: it.label + offset, ..it.clone() }));
        offset += width;
    }
    out
}

/// Runs SGD over the task sets; returns the trained model and the per-step history.
pub fn train(
    mut model: RerankerModel,
    sets: &TrainSets,
    config: &TrainConfig,
) -> Result<(RerankerModel, Vec<HistoryEntry>), RerankError> {
    config.validate().map_err(RerankError::BadWeights)?;
    model.validate()?;
    let sizes = sets.sizes();
    if sizes.iter().all(|&n| n == 0) {
        return Err(RerankError::EmptyBatch);
    }
    let bs = config.batch_size;
    let steps_per_epoch = sizes.iter().map(|n| n.div_ceil(bs)).max().unwrap_or(0);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
    let mut history = Vec::new();
    let mut weights = [1.0 / TASKS as f64; TASKS];
    let mut last_active = [false; TASKS];
    let mut step = 0;

    for epoch in 0..config.epochs {
        let perms: Vec<Vec<usize>> = sizes
            .iter()
            .map(|&n| {
                let mut p: Vec<usize> = (0..n).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        for local in 0..steps_per_epoch {
            let mut results: [Option<LossGrad>; TASKS] = [None, None, None];
            if sizes[0] > 0 {
                results[0] = Some(point_loss_grad(&model, &cyclic_batch(&sets.point, &perms[0], local, bs))?);
            }
            if sizes[1] > 0 {
                let batch = cyclic_batch(&sets.pair, &perms[1], local, bs);
                if batch.iter().any(|g| !g.pairs.is_empty()) {
                    results[1] = Some(pair_loss_grad(&model, &batch)?);
                }
            }
            if sizes[2] > 0 {
                let items = scl_batch(&cyclic_batch(&sets.scl, &perms[2], local, bs));
                if items.len() >= 2 {
                    results[2] = Some(scl_loss_grad(&model, &items)?);
                }
            }
            if results.iter().flatten().any(|r| !r.loss.is_finite()) {
                return Err(RerankError::NonFinite { step });
            }
            let active: [bool; TASKS] = std::array::from_fn(|t| results[t].is_some());
            let mut degenerate = false;
            match &config.weighting {
                Weighting::Fixed(c) => weights = *c,
                Weighting::Mgda => {
                    if step % config.mgda_every == 0 || active != last_active {
                        let grads: Vec<&[f64]> = results.iter().flatten().map(|r| r.grad.as_slice()).collect();
                        if !grads.is_empty() {
                            let r = mgda_weights(&grads)?;
                            degenerate = r.degenerate;
                            let mut it = r.weights.into_vec().into_iter();
                            weights = std::array::from_fn(|t| if active[t] { it.next().unwrap_or(0.0) } else { 0.0 });
                        }
                    }
                }
            }
            last_active = active;

            let (ws, grads): (Vec<f64>, Vec<&[f64]>) =
                (0..TASKS).filter_map(|t| results[t].as_ref().map(|r| (weights[t], r.grad.as_slice()))).unzip();
            let update = combine(&ws, &grads);
            if config.learning_rate != 0.0 && update.iter().any(|&g| g != 0.0) {
                let mut p = model.params();
                for (v, g) in p.iter_mut().zip(&update) {
                    *v -= config.learning_rate * g;
                }
                model.set_params(&p);
            }

            let loss = |t: usize| results[t].as_ref().map(|r| r.loss);
            history.push(HistoryEntry {
                step,
                epoch,
                point_loss: loss(0),
                pair_loss: loss(1),
                scl_loss: loss(2),
                weights,
                degenerate,
            });
            step += 1;
        }
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> TrainSets {
        let mut point = Vec::new();
        for i in 0..8 {
            let x = 0.5 + i as f64 * 0.1;
            point.push(TrainExample {
                query_id: format!("q{i}"),
                doc_id: "p".into(),
                q: vec![1.0, 0.0],
                d: vec![x, 0.2],
                label: 1,
            });
            point.push(TrainExample {
                query_id: format!("q{i}"),
                doc_id: "n".into(),
                q: vec![1.0, 0.0],
                d: vec![-x, 0.2],
                label: 0,
            });
        }
        TrainSets { point, ..Default::default() }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let config = TrainConfig { learning_rate: 0.0, epochs: 3, batch_size: 4, ..Default::default() };
        let start = RerankerModel::identity(2, 0.07);
        let (end, history) = train(start.clone(), &separable(), &config).unwrap();
        assert_eq!(end, start);
        assert_eq!(history.len(), 12);
    }

    #[test]
    fn fixed_point_weighting_decreases_loss() {
        let config = TrainConfig {
            learning_rate: 0.5,
            epochs: 200,
            batch_size: 64,
            weighting: Weighting::Fixed([1.0, 0.0, 0.0]),
            init: Init::Zeros,
            ..Default::default()
        };
        let (_, history) = train(RerankerModel::zeros(2, 0.07), &separable(), &config).unwrap();
        let losses: Vec<f64> = history.iter().map(|h| h.point_loss.unwrap()).collect();
        assert!(losses.windows(2).all(|w| w[1] <= w[0]));
        assert!(*losses.last().unwrap() < 0.1);
    }

    #[test]
    fn empty_sets_rejected() {
        let err = train(RerankerModel::identity(2, 0.07), &TrainSets::default(), &TrainConfig::default());
        assert!(matches!(err, Err(RerankError::EmptyBatch)));
    }

    #[test]
    fn scl_batches_keep_groups_apart() {
        let g = vec![
            SclItem { v: vec![1.0], side: Side::Query, label: 0 },
            SclItem { v: vec![1.0], side: Side::Doc, label: 0 },
            SclItem { v: vec![1.0], side: Side::Doc, label: 1 },
        ];
        let merged = scl_batch(&[&g, &g]);
        let labels: Vec<usize> = merged.iter().map(|i| i.label).collect();
        assert_eq!(labels, [0, 0, 1, 2, 2, 3]);
    }
}
