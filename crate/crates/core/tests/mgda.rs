//! Min-norm weights against an exhaustive simplex grid, plus the simplex and
//! descent certificates.

use dpa_core::rerank::mgda::combine;
use dpa_core::rerank::mgda_weights;
use dpa_oracles::{gaussian_vec, mgda_grid, rng};
use proptest::prelude::*;
use rand::Rng;

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_grads(seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let t = r.random_range(2..=3);
    let dim = r.random_range(1..=64);
    // A shared component makes the tasks partly agree, which puts many minima inside the simplex.
    let spread = r.random_range(0.0..1.5);
    let shared = gaussian_vec(&mut r, dim, spread);
    (0..t)
        .map(|_| {
            let scale = r.random_range(0.1..3.0);
            gaussian_vec(&mut r, dim, scale).iter().zip(&shared).map(|(a, b)| a + b).collect()
        })
        .collect()
}

#[test]
fn weights_beat_the_simplex_grid() {
    for seed in 0..200 {
        let grads = random_grads(seed);
        let res = mgda_weights(&grads).unwrap();
        let steps = if grads.len() == 2 { 1000 } else { 100 };
        let (grid_min, _) = mgda_grid(&grads, steps);
        let d = combine(res.weights.as_slice(), &grads);
        assert!(norm_sq(&d) <= grid_min + 1e-4, "seed {seed}: {} vs grid {grid_min}", norm_sq(&d));
    }
}

#[test]
fn certificates_hold() {
    for seed in 0..200 {
        let grads = random_grads(1000 + seed);
        let res = mgda_weights(&grads).unwrap();
        let c = res.weights.as_slice();
        assert!(c.iter().all(|&x| x >= 0.0), "seed {seed}: {c:?}");
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12, "seed {seed}: {c:?}");
        let d = combine(c, &grads);
        let dd = norm_sq(&d);
        let smallest = grads.iter().map(|g| norm_sq(g)).fold(f64::INFINITY, f64::min);
        assert!(dd <= smallest + 1e-9, "seed {seed}: {dd} > {smallest}");
        for g in &grads {
            assert!(dot(g, &d) >= dd - 1e-6, "seed {seed}: {} < {dd}", dot(g, &d));
        }
        assert!((res.min_norm_sq - dd).abs() <= 1e-9 * dd.max(1.0));
    }
}

#[test]
fn opposed_pair_cancels() {
    let g = vec![vec![1.0, 2.0, -1.0], vec![-1.0, -2.0, 1.0]];
    let res = mgda_weights(&g).unwrap();
    assert!((res.weights.as_slice()[0] - 0.5).abs() < 1e-12);
    assert!(res.min_norm_sq < 1e-20);
}

#[test]
fn zero_gradients_are_degenerate() {
    let res = mgda_weights(&[vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]]).unwrap();
    assert!(res.degenerate);
    assert_eq!(res.weights.as_slice(), [1.0 / 3.0; 3]);
    assert!(mgda_weights::<Vec<f64>>(&[]).is_err());
    assert!(mgda_weights(&[vec![1.0], vec![1.0, 2.0]]).is_err());
}

proptest! {
    #[test]
    fn common_scaling_keeps_weights(seed in 0u64..10_000, k in 0.01f64..100.0) {
        let grads = random_grads(seed);
        let scaled: Vec<Vec<f64>> = grads.iter().map(|g| g.iter().map(|x| x * k).collect()).collect();
        let a = mgda_weights(&grads).unwrap();
        let b = mgda_weights(&scaled).unwrap();
        let da = norm_sq(&combine(b.weights.as_slice(), &grads));
        prop_assert!((da - a.min_norm_sq).abs() <= 1e-6 * a.min_norm_sq.max(1e-6));
    }

    #[test]
    fn task_order_does_not_matter(seed in 0u64..10_000) {
        let grads = random_grads(seed);
        let mut rev = grads.clone();
        rev.reverse();
        let a = mgda_weights(&grads).unwrap().min_norm_sq;
        let b = mgda_weights(&rev).unwrap().min_norm_sq;
        prop_assert!((a - b).abs() <= 1e-8 * a.max(1e-8));
    }
}
