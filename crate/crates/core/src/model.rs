//! Domain records shared by every stage.
//!
//! All records are plain data with fixed JSON field names. Each record keeps a
//! flattened `extra` map so that lenient readers can carry unknown fields
//! through a stage untouched; strict readers reject them (see [`crate::jsonl`]).

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::fmt;

/// Unknown-field bag carried by every record type.
pub type Extra = Map<String, Value>;

/// Common surface of the record types persisted as JSON lines.
pub trait Record: Serialize + serde::de::DeserializeOwned {
    fn extra(&self) -> &Extra;

    /// Checks invariants serde cannot express. Returns a human-readable reason.
    fn validate(&self) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    pub embedding: Vec<f32>,
    #[serde(flatten, default, skip_serializing_if = "Map::is_empty")]
    pub extra: Extra,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        title: impl Into<String>,
        text: impl Into<String>,
        embedding: Vec<f32>,
    ) -> Self {
        Self { doc_id: doc_id.into(), title: title.into(), text: text.into(), embedding, extra: Extra::new() }
    }
}

impl Record for Document {
    fn extra(&self) -> &Extra {
        &self.extra
    }

    fn validate(&self) -> Result<(), String> {
        if self.doc_id.is_empty() {
            return Err("doc_id must be non-empty".into());
        }
        Ok(())
    }
}

/// One retrieval hit: a document id with its similarity score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: String,
    pub score: f32,
}

impl Hit {
    pub fn new(doc_id: impl Into<String>, score: f32) -> Self {
        Self { doc_id: doc_id.into(), score }
    }
}

/// Where an augmented query came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub query_id: String,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub query: String,
    pub gold_answers: Vec<String>,
    pub embedding: Vec<f32>,
    #[serde(default)]
    pub retrieved: Vec<Hit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Provenance>,
    #[serde(flatten, default, skip_serializing_if = "Map::is_empty")]
    pub extra: Extra,
}

impl QueryRecord {
    pub fn new(
        query_id: impl Into<String>,
        query: impl Into<String>,
        gold_answers: Vec<String>,
        embedding: Vec<f32>,
    ) -> Self {
        Self {
            query_id: query_id.into(),
            query: query.into(),
            gold_answers,
            embedding,
            retrieved: Vec::new(),
            origin: None,
            extra: Extra::new(),
        }
    }
}

impl Record for QueryRecord {
    fn extra(&self) -> &Extra {
        &self.extra
    }

    fn validate(&self) -> Result<(), String> {
        if self.gold_answers.is_empty() {
            return Err("gold_answers must be non-empty".into());
        }
        // NaN scores compare false both ways and are rejected here as unsorted.
        for (i, pair) in self.retrieved.windows(2).enumerate() {
            if !(pair[0].score >= pair[1].score) {
                return Err(format!("retrieved not sorted by score at position {}", i + 2));
            }
        }
        Ok(())
    }
}

/// Outcome category of one (query, document) reader trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PreferenceLabel {
    BothCorrect,
    AlignedKnowledge,
    UnalignedKnowledge,
    BothIncorrect,
}

impl PreferenceLabel {
    pub const ALL: [PreferenceLabel; 4] = [
        PreferenceLabel::BothCorrect,
        PreferenceLabel::AlignedKnowledge,
        PreferenceLabel::UnalignedKnowledge,
        PreferenceLabel::BothIncorrect,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PreferenceLabel::BothCorrect => "BothCorrect",
            PreferenceLabel::AlignedKnowledge => "AlignedKnowledge",
            PreferenceLabel::UnalignedKnowledge => "UnalignedKnowledge",
            PreferenceLabel::BothIncorrect => "BothIncorrect",
        }
    }

    /// Aligned or unaligned: the document changed the reader's outcome.
    pub fn is_preference(self) -> bool {
        matches!(self, PreferenceLabel::AlignedKnowledge | PreferenceLabel::UnalignedKnowledge)
    }
}

impl fmt::Display for PreferenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The fixed 1-based retrieval ranks sampled per query.
pub const SUBSET_RANKS: [u32; 4] = [1, 25, 50, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetEntry {
    pub rank: u32,
    pub doc_id: String,
    pub label: PreferenceLabel,
    /// Retriever similarity at this rank.
    pub retriever_score: f32,
    /// Reader-derived preference score (answer probability, normalized rating or win rate).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSample {
    pub query_id: String,
    pub subset: Vec<SubsetEntry>,
    pub direct_correct: bool,
    /// Reader preference order as 1-based positions into `subset`, most preferred first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub preference_order: Vec<usize>,
    #[serde(flatten, default, skip_serializing_if = "Map::is_empty")]
    pub extra: Extra,
}

impl PreferenceSample {
    pub fn has_preference_label(&self) -> bool {
        self.subset.iter().any(|e| e.label.is_preference())
    }
}

impl Record for PreferenceSample {
    fn extra(&self) -> &Extra {
        &self.extra
    }

    fn validate(&self) -> Result<(), String> {
        let ranks: Vec<u32> = self.subset.iter().map(|e| e.rank).collect();
        if ranks != SUBSET_RANKS {
            return Err(format!("subset ranks must be {SUBSET_RANKS:?}, got {ranks:?}"));
        }
        if !self.preference_order.is_empty() {
            let mut seen = self.preference_order.clone();
            seen.sort_unstable();
            if seen != (1..=self.subset.len()).collect::<Vec<_>>() {
                return Err("preference_order is not a permutation of subset positions".into());
            }
        }
        Ok(())
    }
}

/// Query rewriting strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    Rephrasing,
    Complexity,
    Decomposition,
    Constraint,
    #[serde(rename = "SPARQL")]
    Sparql,
}

impl Strategy {
    pub const ALL: [Strategy; 5] =
        [Strategy::Rephrasing, Strategy::Complexity, Strategy::Decomposition, Strategy::Constraint, Strategy::Sparql];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Rephrasing => "Rephrasing",
            Strategy::Complexity => "Complexity",
            Strategy::Decomposition => "Decomposition",
            Strategy::Constraint => "Constraint",
            Strategy::Sparql => "SPARQL",
        }
    }

    /// The rewriting requirement sentence placed into the augmentation prompt.
    pub fn requirement(self) -> &'static str {
        match self {
            Strategy::Rephrasing => "Rephrase the original query with the same intention.",
            Strategy::Complexity => "Increase the semantic complexity of the original query.",
            Strategy::Decomposition => "Decompose the original query into several sub-problems.",
            Strategy::Constraint => "Add more conditional and constrained statements to the original query.",
            Strategy::Sparql => "Rewrite the original query based on the SPARQL syntax and generate it directly.",
        }
    }

    pub fn parse(name: &str) -> Option<Strategy> {
        Strategy::ALL.into_iter().find(|s| s.as_str().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl NliLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            NliLabel::Entailment => "entailment",
            NliLabel::Neutral => "neutral",
            NliLabel::Contradiction => "contradiction",
        }
    }
}

/// NLI status of an augmented query; `Pending` until the filter runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliStatus {
    #[default]
    Pending,
    Entailment,
    Neutral,
    Contradiction,
}

impl From<NliLabel> for NliStatus {
    fn from(label: NliLabel) -> Self {
        match label {
            NliLabel::Entailment => NliStatus::Entailment,
            NliLabel::Neutral => NliStatus::Neutral,
            NliLabel::Contradiction => NliStatus::Contradiction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedQuery {
    pub origin_query_id: String,
    pub strategy: Strategy,
    pub text: String,
    #[serde(default)]
    pub nli_verdict: NliStatus,
    /// Probabilities in (entailment, neutral, contradiction) order once judged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli_scores: Option<[f64; 3]>,
    #[serde(flatten, default, skip_serializing_if = "Map::is_empty")]
    pub extra: Extra,
}

impl AugmentedQuery {
    /// Id of the merged training query derived from this rewrite.
    pub fn derived_query_id(&self) -> String {
        format!("{}::{}", self.origin_query_id, self.strategy)
    }
}

impl Record for AugmentedQuery {
    fn extra(&self) -> &Extra {
        &self.extra
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignStage {
    Prealigned,
    Sft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMetadata {
    /// The reference answer that opens the target.
    pub answer: String,
    /// Judgement sentence of a pre-aligned record, also appended to its target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judgement: Option<String>,
    /// Documents in prompt order.
    pub doc_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub query_id: String,
    pub stage: AlignStage,
    pub prompt: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pref_doc_position: Option<u32>,
    pub seed_used: u64,
    pub metadata: AlignmentMetadata,
    #[serde(flatten, default, skip_serializing_if = "Map::is_empty")]
    pub extra: Extra,
}

impl Record for AlignmentRecord {
    fn extra(&self) -> &Extra {
        &self.extra
    }

    fn validate(&self) -> Result<(), String> {
        match (self.stage, self.pref_doc_position) {
            (AlignStage::Prealigned, None) => Err("prealigned record needs pref_doc_position".into()),
            (AlignStage::Prealigned, Some(0)) => Err("pref_doc_position is 1-based".into()),
            (AlignStage::Sft, Some(_)) => Err("sft record must not carry pref_doc_position".into()),
            _ => Ok(()),
        }
    }
}

/// One per-item failure of a stage that continues past errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub id: String,
    pub stage: String,
    pub error: String,
    #[serde(flatten, default, skip_serializing_if = "Map::is_empty")]
    pub extra: Extra,
}

impl FailureRecord {
    pub fn new(id: impl Into<String>, stage: impl Into<String>, error: impl fmt::Display) -> Self {
        Self { id: id.into(), stage: stage.into(), error: error.to_string(), extra: Extra::new() }
    }
}

impl Record for FailureRecord {
    fn extra(&self) -> &Extra {
        &self.extra
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preference_label_names_are_golden() {
        let names: Vec<String> = PreferenceLabel::ALL.iter().map(|l| serde_json::to_string(l).unwrap()).collect();
        assert_eq!(names, ["\"BothCorrect\"", "\"AlignedKnowledge\"", "\"UnalignedKnowledge\"", "\"BothIncorrect\""]);
        for l in PreferenceLabel::ALL {
            assert_eq!(serde_json::to_string(&l).unwrap(), format!("\"{l}\""));
        }
    }

    #[test]
    fn strategy_serializes_sparql_uppercase() {
        assert_eq!(serde_json::to_string(&Strategy::Sparql).unwrap(), "\"SPARQL\"");
        assert_eq!(Strategy::parse("sparql"), Some(Strategy::Sparql));
        assert_eq!(Strategy::parse("paraphrase"), None);
    }

    #[test]
    fn unsorted_retrieval_is_invalid() {
        let mut q = QueryRecord::new("q", "x", vec!["a".into()], vec![]);
        q.retrieved = vec![Hit::new("a", 0.1), Hit::new("b", 0.2)];
        assert!(q.validate().is_err());
        q.retrieved.reverse();
        assert!(q.validate().is_ok());
        q.gold_answers.clear();
        assert!(q.validate().is_err());
    }
}
