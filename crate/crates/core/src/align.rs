//! Reader training files: pre-aligned judgement records and SFT records.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, CorpusError};
use crate::model::{
    AlignStage, AlignmentMetadata, AlignmentRecord, Extra, PreferenceLabel, PreferenceSample, QueryRecord,
};
use crate::prompts::{self, DocView};

pub const DEFAULT_K: usize = 3;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AlignError {
    #[error("sample {0} has no aligned or unaligned document")]
    NoPreferenceDoc(String),
    #[error("corpus has {have} documents, need at least {need}")]
    CorpusTooSmall { have: usize, need: usize },
    #[error("expected {expected} documents for {query_id}, got {found}")]
    WrongK { query_id: String, expected: usize, found: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Per-record seed: the global seed mixed with a hash of the query id, so a
/// record does not depend on which other records are emitted.
pub fn record_seed(global_seed: u64, query_id: &str) -> u64 {
    let digest = Sha256::digest(query_id.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    global_seed ^ u64::from_le_bytes(head)
}

/// Plants one aligned or unaligned document among `k - 1` random corpus
/// documents at a random position, and asks for the answer plus a judgement.
///
/// `query` supplies the text and answers; for augmented queries it differs
/// from the record that produced `sample`.
pub fn emit_prealigned(
    sample: &PreferenceSample,
    query: &QueryRecord,
    corpus: &Corpus,
    k: usize,
    global_seed: u64,
) -> Result<AlignmentRecord, AlignError> {
    if k == 0 {
        return Err(AlignError::ZeroK);
    }
    let eligible: Vec<_> = sample.subset.iter().filter(|e| e.label.is_preference()).collect();
    if eligible.is_empty() {
        return Err(AlignError::NoPreferenceDoc(sample.query_id.clone()));
    }
    if corpus.len() < k {
        return Err(AlignError::CorpusTooSmall { have: corpus.len(), need: k });
    }
    let seed = record_seed(global_seed, &query.query_id);
    let mut rng = SplitMix64::seed_from_u64(seed);

    let chosen = eligible[rng.random_range(0..eligible.len())];
    let chosen_row = corpus.docs().iter().position(|d| d.doc_id == chosen.doc_id);
    let chosen_doc = corpus.get(&chosen.doc_id)?;
    // Draw among the other rows: indices at or past the chosen row shift by one.
    let pool = corpus.len() - usize::from(chosen_row.is_some());
    if pool < k - 1 {
        return Err(AlignError::CorpusTooSmall { have: corpus.len(), need: k });
    }
    let mut ids: Vec<String> = index::sample(&mut rng, pool, k - 1)
        .into_iter()
        .map(|i| match chosen_row {
            Some(c) if i >= c => i + 1,
            _ => i,
        })
        .map(|i| corpus.docs()[i].doc_id.clone())
        .collect();
    let position = rng.random_range(1..=k);
    ids.insert(position - 1, chosen_doc.doc_id.clone());

    let views = corpus.views(&ids)?;
    let positive = chosen.label == PreferenceLabel::AlignedKnowledge;
    let answer = query.gold_answers[0].clone();
    let judgement = prompts::judgement_sentence(position, positive);
    Ok(AlignmentRecord {
        query_id: query.query_id.clone(),
        stage: AlignStage::Prealigned,
        prompt: prompts::prealigned_prompt(&query.query, &views, position),
        target: format!("{answer}\n{judgement}"),
        pref_doc_position: Some(position as u32),
        seed_used: seed,
        metadata: AlignmentMetadata { answer, judgement: Some(judgement), doc_ids: ids, origin: query.origin.clone() },
        extra: Extra::new(),
    })
}

/// Reader prompt over the reranked top-k documents, answered with the first gold answer.
pub fn emit_sft<S: AsRef<str>>(
    query: &QueryRecord,
    topk: &[S],
    corpus: &Corpus,
    k: usize,
    global_seed: u64,
) -> Result<AlignmentRecord, AlignError> {
    if topk.len() != k {
        return Err(AlignError::WrongK { query_id: query.query_id.clone(), expected: k, found: topk.len() });
    }
    let views: Vec<DocView<'_>> = corpus.views(topk)?;
    let answer = query.gold_answers[0].clone();
    Ok(AlignmentRecord {
        query_id: query.query_id.clone(),
        stage: AlignStage::Sft,
        prompt: prompts::sft_prompt(&query.query, &views),
        target: answer.clone(),
        pref_doc_position: None,
        seed_used: global_seed,
        metadata: AlignmentMetadata {
            answer,
            judgement: None,
            doc_ids: topk.iter().map(|s| s.as_ref().to_string()).collect(),
            origin: query.origin.clone(),
        },
        extra: Extra::new(),
    })
}

pub fn sort_records(records: &mut [AlignmentRecord]) {
    records.sort_by(|a, b| (&a.query_id, a.stage).cmp(&(&b.query_id, b.stage)));
}
