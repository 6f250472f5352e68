//! Fused preference orders, pair expansion and pairwise ranking.

use dpa_core::rerank::{build_order, make_pairs, pairwise_order, PairWinner};
use dpa_oracles::{gaussian_vec, rng};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

#[test]
fn build_order_ignores_common_positive_scaling() {
    for seed in 0..500 {
        let mut r = rng(seed);
        let k = r.random_range(1..=12);
        let llm = gaussian_vec(&mut r, k, 1.0);
        let ret = gaussian_vec(&mut r, k, 1.0);
        let a = r.random_range(0.0..=1.0);
        let c = r.random_range(1e-3..1e3);
        let scale = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
        let base = build_order(&llm, &ret, a).unwrap();
        let scaled = build_order(&scale(&llm), &scale(&ret), a).unwrap();
        assert_eq!(base.order, scaled.order, "seed {seed}");
    }
}

#[test]
fn make_pairs_lists_every_ordered_pair_once() {
    for seed in 0..500 {
        let mut r = rng(10_000 + seed);
        let k = r.random_range(0..=10);
        let order = build_order(&gaussian_vec(&mut r, k, 1.0), &gaussian_vec(&mut r, k, 1.0), 0.8).unwrap();
        let pairs = make_pairs(&order);
        assert_eq!(pairs.len(), k * k.saturating_sub(1) / 2);
        let pos = |i: usize| order.order.iter().position(|&x| x == i).unwrap();
        let mut seen = std::collections::HashSet::new();
        for &(w, l) in &pairs {
            assert!(pos(w) < pos(l));
            assert!(order.scores[w] >= order.scores[l]);
            assert!(seen.insert((w.min(l), w.max(l))));
        }
    }
}

#[test]
fn pairwise_order_recovers_a_consistent_comparator() {
    for seed in 0..500 {
        let mut r = rng(20_000 + seed);
        let k = r.random_range(1..=10);
        let mut hidden: Vec<usize> = (0..k).collect();
        hidden.shuffle(&mut r);
        let rank = |i: usize| hidden.iter().position(|&x| x == i).unwrap();
        let mut calls = 0;
        let got = pairwise_order::<()>(k, |i, j| {
            calls += 1;
            Ok(if rank(i) < rank(j) { PairWinner::First } else { PairWinner::Second })
        })
        .unwrap();
        assert_eq!(got.order, hidden, "seed {seed}");
        assert_eq!(calls, k * k.saturating_sub(1) / 2);
    }
}

#[test]
fn ties_fall_back_to_retriever_rank() {
    let order = build_order(&[0.5, 0.5, 0.9, 0.5], &[0.2, 0.2, 0.1, 0.2], 0.8).unwrap();
    assert_eq!(order.order, [2, 0, 1, 3]);
    assert!(build_order(&[1.0], &[1.0], 1.5).is_err());
    assert!(build_order(&[1.0, 2.0], &[1.0], 0.5).is_err());
}

#[test]
fn comparator_errors_propagate() {
    let res = pairwise_order(3, |_, j| if j == 2 { Err("boom") } else { Ok(PairWinner::First) });
    assert_eq!(res.unwrap_err(), "boom");
}

proptest! {
    #[test]
    fn weight_extremes_follow_one_signal(llm in prop::collection::vec(-5.0f64..5.0, 1..8), seed in 0u64..1000) {
        let mut r = rng(seed);
        let ret = gaussian_vec(&mut r, llm.len(), 1.0);
        let by_llm = build_order(&llm, &ret, 1.0).unwrap();
        let mut want: Vec<usize> = (0..llm.len()).collect();
        want.sort_by(|&i, &j| llm[j].partial_cmp(&llm[i]).unwrap().then(i.cmp(&j)));
        prop_assert_eq!(by_llm.order, want);
    }
}
