//! Placement statistics and structure of the emitted reader training records.

use dpa_core::align::{emit_prealigned, emit_sft, record_seed};
use dpa_core::corpus::Corpus;
use dpa_core::model::{Document, Extra, PreferenceLabel, PreferenceSample, QueryRecord, SubsetEntry, SUBSET_RANKS};
use dpa_oracles::{chi_square_p_df2, chi_square_uniform};

fn corpus(n: usize) -> Corpus {
    Corpus::new((0..n).map(|i| Document::new(format!("d{i}"), format!("T{i}"), format!("text {i}"), vec![])).collect())
        .unwrap()
}

fn sample(id: &str, labels: [PreferenceLabel; 4]) -> PreferenceSample {
    PreferenceSample {
        query_id: id.into(),
        subset: SUBSET_RANKS
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&rank, label))| SubsetEntry {
                rank,
                doc_id: format!("d{i}"),
                label,
                retriever_score: 1.0,
                llm_score: None,
            })
            .collect(),
        direct_correct: false,
        preference_order: vec![],
        extra: Extra::new(),
    }
}

use PreferenceLabel::*;

#[test]
fn planted_position_is_uniform() {
    let c = corpus(50);
    let mut counts = [0usize; 3];
    for i in 0..3000 {
        let id = format!("q{i}");
        let s = sample(&id, [BothCorrect, AlignedKnowledge, BothIncorrect, UnalignedKnowledge]);
        let q = QueryRecord::new(&id, "question", vec!["ans".into()], vec![]);
        let rec = emit_prealigned(&s, &q, &c, 3, 11).unwrap();
        counts[rec.pref_doc_position.unwrap() as usize - 1] += 1;
    }
    let p = chi_square_p_df2(chi_square_uniform(&counts));
    assert!(p > 0.01, "{counts:?} p = {p}");
}

#[test]
fn records_have_k_distinct_documents_with_the_planted_one_in_place() {
    let c = corpus(8);
    for k in 1..=8 {
        for i in 0..100 {
            let id = format!("q{i}");
            let s = sample(&id, [BothCorrect, UnalignedKnowledge, AlignedKnowledge, BothIncorrect]);
            let q = QueryRecord::new(&id, "question", vec!["ans".into(), "alt".into()], vec![]);
            let rec = emit_prealigned(&s, &q, &c, k, 5).unwrap();
            let ids = &rec.metadata.doc_ids;
            assert_eq!(ids.len(), k);
            let mut uniq = ids.clone();
            uniq.sort();
            uniq.dedup();
            assert_eq!(uniq.len(), k);
            let planted = &ids[rec.pref_doc_position.unwrap() as usize - 1];
            assert!(planted == "d1" || planted == "d2", "{planted}");
            let positive = planted == "d2";
            assert!(rec.target.starts_with("ans\n"));
            let word = if positive { "Positive" } else { "Negative" };
            assert!(rec.target.ends_with(&format!("is {word} knowledge for answering question.")), "{}", rec.target);
            assert_eq!(rec.seed_used, record_seed(5, &id));
        }
    }
}

#[test]
fn records_are_independent_of_emission_order() {
    let c = corpus(30);
    let emit = |id: &str| {
        let s = sample(id, [AlignedKnowledge, BothCorrect, BothCorrect, UnalignedKnowledge]);
        emit_prealigned(&s, &QueryRecord::new(id, "question", vec!["a".into()], vec![]), &c, 3, 1).unwrap()
    };
    let forward: Vec<_> = (0..20).map(|i| emit(&format!("q{i}"))).collect();
    let backward: Vec<_> = (0..20).rev().map(|i| emit(&format!("q{i}"))).collect();
    assert!(forward.iter().all(|r| backward.contains(r)));
}

#[test]
fn samples_without_preference_documents_are_refused() {
    let c = corpus(10);
    let s = sample("q", [BothCorrect, BothCorrect, BothIncorrect, BothIncorrect]);
    let q = QueryRecord::new("q", "question", vec!["a".into()], vec![]);
    assert!(emit_prealigned(&s, &q, &c, 3, 0).is_err());
    assert!(emit_prealigned(&sample("q", [AlignedKnowledge; 4]), &q, &corpus(2), 3, 0).is_err());
}

#[test]
fn sft_records_need_exactly_k_documents() {
    let c = corpus(5);
    let q = QueryRecord::new("q", "question", vec!["a".into()], vec![]);
    let rec = emit_sft(&q, &["d3", "d1", "d4"], &c, 3, 2).unwrap();
    assert_eq!(rec.metadata.doc_ids, ["d3", "d1", "d4"]);
    assert_eq!(rec.target, "a");
    assert!(emit_sft(&q, &["d3"], &c, 3, 2).is_err());
    assert!(emit_sft(&q, &["d3", "d1", "zz"], &c, 3, 2).is_err());
}
