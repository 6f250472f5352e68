//! Preference data construction: outcome categories, sample mining, query
//! augmentation, NLI filtering and merging.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusError};
use crate::gateway::nli::{nli_judge, NliScorer};
use crate::gateway::reader::{compare_documents, score_document, ScoreMode, Winner};
use crate::gateway::{fan_out, Client, GatewayError};
use crate::model::{
    AugmentedQuery, Extra, FailureRecord, NliStatus, PreferenceLabel, PreferenceSample, Provenance, QueryRecord,
    Strategy, SubsetEntry,
};
use crate::prompts::{self, DocView};
use crate::rerank::order::{build_order, normalize_ratings, pairwise_order, PairWinner};
use crate::rerank::RerankError;
use crate::retrieval::{hierarchical_subset, RetrievalError};
pub use crate::text::judge_answer;

#[derive(Debug, thiserror::Error)]
pub enum PrefError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error("no original query {0} for augmented record")]
    MissingOrigin(String),
    #[error("augmented query {0} was judged a contradiction and cannot be merged")]
    Contradiction(String),
}

/// Outcome category of one (query, document) trial.
pub fn categorize(direct_correct: bool, with_doc_correct: bool) -> PreferenceLabel {
    match (direct_correct, with_doc_correct) {
        (true, true) => PreferenceLabel::BothCorrect,
        (false, true) => PreferenceLabel::AlignedKnowledge,
        (true, false) => PreferenceLabel::UnalignedKnowledge,
        (false, false) => PreferenceLabel::BothIncorrect,
    }
}

/// How the reader's preference score for each subset document is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scoring {
    /// Probability of the single-document answer, `exp(logprob)`.
    #[default]
    Logit,
    /// Min-max normalized 1-5 ratings.
    Rating,
    /// Copeland win rate over all pairwise comparisons.
    Pairwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrefConfig {
    pub scoring: Scoring,
    /// Weight of the reader score against the retriever score.
    pub fusion_weight: f64,
}

impl Default for PrefConfig {
    fn default() -> Self {
        Self { scoring: Scoring::Logit, fusion_weight: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    /// Retained samples, sorted by query id.
    pub samples: Vec<PreferenceSample>,
    pub failures: Vec<FailureRecord>,
    /// Queries mined without error (retained or not).
    pub processed: usize,
}

impl Extraction {
    pub fn retention_ratio(&self) -> f64 {
        if self.processed == 0 {
            0.0
        } else {
            self.samples.len() as f64 / self.processed as f64
        }
    }
}

/// Labels the query's hierarchical subset; `None` when no document changes the outcome.
pub fn mine_query(
    query: &QueryRecord,
    corpus: &Corpus,
    client: &Client,
    config: &PrefConfig,
) -> Result<Option<PreferenceSample>, PrefError> {
    let subset = hierarchical_subset(&query.retrieved)?;
    let direct = client.prompt(prompts::sft_prompt(&query.query, &[]))?;
    let direct_correct = judge_answer(&direct, &query.gold_answers);

    let mut entries = Vec::with_capacity(subset.len());
    let mut views = Vec::with_capacity(subset.len());
    let mut logit_scores = Vec::with_capacity(subset.len());
    for (rank, hit) in &subset {
        let view = corpus.view(&hit.doc_id)?;
        let mut req = client.request(prompts::sft_prompt(&query.query, &[view]));
        req.logprobs = config.scoring == Scoring::Logit;
        let reply = client.complete_full(&req)?;
        let label = categorize(direct_correct, judge_answer(&reply.text, &query.gold_answers));
        if config.scoring == Scoring::Logit {
            logit_scores.push(reply.logprob.ok_or(GatewayError::MissingLogprob)?.exp());
        }
        entries.push(SubsetEntry {
            rank: *rank,
            doc_id: hit.doc_id.clone(),
            label,
            retriever_score: hit.score,
            llm_score: None,
        });
        views.push(view);
    }
    if !entries.iter().any(|e| e.label.is_preference()) {
        return Ok(None);
    }

    let llm_scores = match config.scoring {
        Scoring::Logit => logit_scores,
        Scoring::Rating => {
            let raw = views
                .iter()
                .map(|v| score_document(client, &query.query, *v, ScoreMode::Rating))
                .collect::<Result<Vec<_>, _>>()?;
            normalize_ratings(&raw)
        }
        Scoring::Pairwise => {
            let k = views.len();
            let order = pairwise_order(k, |i, j| {
                compare_documents(client, &query.query, views[i], views[j]).map(|w| match w {
                    Winner::A => PairWinner::First,
                    Winner::B => PairWinner::Second,
                })
            })?;
            let denom = (k.max(2) - 1) as f64;
            order.scores.iter().map(|w| w / denom).collect()
        }
    };
    let retriever: Vec<f64> = entries.iter().map(|e| e.retriever_score as f64).collect();
    let order = build_order(&llm_scores, &retriever, config.fusion_weight)?;
    for (e, s) in entries.iter_mut().zip(&llm_scores) {
        e.llm_score = Some(*s);
    }
    Ok(Some(PreferenceSample {
        query_id: query.query_id.clone(),
        subset: entries,
        direct_correct,
        preference_order: order.one_based(),
        extra: Extra::new(),
    }))
}

/// Mines every query under the client's concurrency bound; failed queries go to
/// the failure list and the rest continue.
pub fn extract_preferences(
    queries: &[QueryRecord],
    corpus: &Corpus,
    client: &Client,
    config: &PrefConfig,
) -> Extraction {
    let results = fan_out(queries, client.max_in_flight(), |q| mine_query(q, corpus, client, config));
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    let mut processed = 0;
    for (q, r) in queries.iter().zip(results) {
        match r {
            Ok(sample) => {
                processed += 1;
                samples.extend(sample);
            }
            Err(e) => failures.push(FailureRecord::new(&q.query_id, "extract-pref", e)),
        }
    }
    samples.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    failures.sort_by(|a, b| a.id.cmp(&b.id));
    Extraction { samples, failures, processed }
}

/// Rewrites `query` under `strategy`; the verdict stays pending until filtering.
pub fn augment_query(
    query: &QueryRecord,
    title: &str,
    top_docs: &[DocView<'_>],
    strategy: Strategy,
    client: &Client,
) -> Result<AugmentedQuery, PrefError> {
    let prompt = prompts::augmentation_prompt(&query.query, top_docs, title, strategy.requirement());
    let text = client.prompt(prompt)?.trim().to_string();
    Ok(AugmentedQuery {
        origin_query_id: query.query_id.clone(),
        strategy,
        text,
        nli_verdict: NliStatus::Pending,
        nli_scores: None,
        extra: Extra::new(),
    })
}

/// Augments every query with every strategy, using the top retrieved document
/// as reference. Output is ordered by (query id, strategy).
pub fn augment_all(
    queries: &[QueryRecord],
    corpus: &Corpus,
    strategies: &[Strategy],
    client: &Client,
) -> (Vec<AugmentedQuery>, Vec<FailureRecord>) {
    let jobs: Vec<(&QueryRecord, Strategy)> =
        queries.iter().flat_map(|q| strategies.iter().map(move |s| (q, *s))).collect();
    let results = fan_out(&jobs, client.max_in_flight(), |(q, s)| -> Result<AugmentedQuery, PrefError> {
        let top: Vec<DocView<'_>> = match q.retrieved.first() {
            Some(h) => vec![corpus.view(&h.doc_id)?],
            None => Vec::new(),
        };
        let title = top.first().map_or("", |d| d.title);
        augment_query(q, title, &top, *s, client)
    });
    let mut out = Vec::new();
    let mut failures = Vec::new();
    for ((q, s), r) in jobs.iter().zip(results) {
        match r {
            Ok(a) => out.push(a),
            Err(e) => failures.push(FailureRecord::new(format!("{}::{}", q.query_id, s), "augment", e)),
        }
    }
    out.sort_by(|a, b| (&a.origin_query_id, a.strategy).cmp(&(&b.origin_query_id, b.strategy)));
    (out, failures)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// Every successfully judged record with its verdict, in input order.
    pub judged: Vec<AugmentedQuery>,
    /// Entailment and neutral records.
    pub retained: Vec<AugmentedQuery>,
    pub failures: Vec<FailureRecord>,
}

impl FilterOutcome {
    pub fn drop_rate(&self) -> f64 {
        if self.judged.is_empty() {
            0.0
        } else {
            1.0 - self.retained.len() as f64 / self.judged.len() as f64
        }
    }
}

/// Judges each rewrite against its original query and drops contradictions.
pub fn filter_augmented(
    augmented: &[AugmentedQuery],
    originals: &HashMap<String, QueryRecord>,
    scorer: &dyn NliScorer,
) -> FilterOutcome {
    let mut judged = Vec::new();
    let mut failures = Vec::new();
    for a in augmented {
        let verdict = originals
            .get(&a.origin_query_id)
            .ok_or_else(|| PrefError::MissingOrigin(a.origin_query_id.clone()))
            .and_then(|o| nli_judge(scorer, &o.query, &a.text).map_err(PrefError::from));
        match verdict {
            Ok(v) => {
                let mut a = a.clone();
                a.nli_verdict = v.label.into();
                a.nli_scores = Some(v.scores);
                judged.push(a);
            }
            Err(e) => failures.push(FailureRecord::new(a.derived_query_id(), "filter", e)),
        }
    }
    let retained = judged.iter().filter(|a| a.nli_verdict != NliStatus::Contradiction).cloned().collect();
    FilterOutcome { judged, retained, failures }
}

/// The query record a retained rewrite contributes to the merged training set.
pub fn augmented_record(aug: &AugmentedQuery, origin: &QueryRecord) -> QueryRecord {
    QueryRecord {
        query_id: aug.derived_query_id(),
        query: aug.text.clone(),
        gold_answers: origin.gold_answers.clone(),
        embedding: origin.embedding.clone(),
        retrieved: origin.retrieved.clone(),
        origin: Some(Provenance { query_id: origin.query_id.clone(), strategy: aug.strategy }),
        extra: Extra::new(),
    }
}

/// Concatenates the originals with every augmented set, keeping provenance.
pub fn merge_pref(original: &[QueryRecord], augmented: &[Vec<AugmentedQuery>]) -> Result<Vec<QueryRecord>, PrefError> {
    let by_id: HashMap<&str, &QueryRecord> = original.iter().map(|q| (q.query_id.as_str(), q)).collect();
    let mut merged = original.to_vec();
    for set in augmented {
        for a in set {
            if a.nli_verdict == NliStatus::Contradiction {
                return Err(PrefError::Contradiction(a.derived_query_id()));
            }
            let origin = by_id
                .get(a.origin_query_id.as_str())
                .ok_or_else(|| PrefError::MissingOrigin(a.origin_query_id.clone()))?;
            merged.push(augmented_record(a, origin));
        }
    }
    Ok(merged)
}
