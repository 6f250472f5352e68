//! Reference implementations and random fixtures used to check `dpa-core`.
//!
//! Everything here is written independently of the code under test: losses
//! are re-evaluated in 128-bit-mantissa arithmetic, MGDA against a simplex
//! grid, retrieval against a full sort.

use astro_float::{BigFloat, Consts, RoundingMode};
use dpa_core::align::{emit_prealigned, emit_sft};
use dpa_core::corpus::Corpus;
use dpa_core::model::{Document, Extra, Hit, PreferenceLabel, PreferenceSample, QueryRecord, Strategy, SubsetEntry};
use dpa_core::prompts::{augmentation_prompt, pairwise_prompt, rating_prompt};
use dpa_core::rerank::{PairGroup, RerankerModel, SclItem, Side, TrainExample};
use dpa_core::store::EmbeddingStore;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type TestRng = Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> TestRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut TestRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect()
}

pub fn random_model(rng: &mut TestRng, dim: usize, tau: f64) -> RerankerModel {
    RerankerModel { dim, w: gaussian_vec(rng, dim * dim, 0.5), bias: rng.sample::<f64, _>(StandardNormal) * 0.5, tau }
}

/// `W = I + E` with a small Gaussian `E`, so projections stay away from the
/// null space where the normalization has large curvature.
pub fn conditioned_model(rng: &mut TestRng, dim: usize, tau: f64) -> RerankerModel {
    let mut m = random_model(rng, dim, tau);
    let scale = 0.3 / (dim as f64).sqrt();
    for i in 0..dim {
        for j in 0..dim {
            m.w[i * dim + j] = f64::from(u8::from(i == j)) + m.w[i * dim + j] * 2.0 * scale;
        }
    }
    m
}

pub fn point_batch(rng: &mut TestRng, dim: usize, n: usize) -> Vec<TrainExample> {
    (0..n)
        .map(|i| TrainExample {
            query_id: format!("q{i}"),
            doc_id: format!("d{i}"),
            q: gaussian_vec(rng, dim, 0.7),
            d: gaussian_vec(rng, dim, 0.7),
            label: rng.random_range(0..=1),
        })
        .collect()
}

/// Groups of 2 to 4 documents whose pairs follow a random total order.
pub fn pair_groups(rng: &mut TestRng, dim: usize, n: usize) -> Vec<PairGroup> {
    (0..n)
        .map(|i| {
            let k = rng.random_range(2..=4);
            let mut order: Vec<usize> = (0..k).collect();
            order.shuffle(rng);
            let mut pairs = Vec::new();
            for a in 0..k {
                for b in a + 1..k {
                    pairs.push((order[a], order[b]));
                }
            }
            PairGroup {
                query_id: format!("q{i}"),
                q: gaussian_vec(rng, dim, 0.7),
                docs: (0..k).map(|_| gaussian_vec(rng, dim, 0.7)).collect(),
                pairs,
            }
        })
        .collect()
}

/// Items with labels drawn from a small pool so most anchors have partners.
pub fn scl_batch(rng: &mut TestRng, dim: usize, n: usize) -> Vec<SclItem> {
    let labels = (n / 2).max(1);
    (0..n)
        .map(|_| SclItem {
            v: gaussian_vec(rng, dim, 1.0),
            side: if rng.random_bool(0.5) { Side::Query } else { Side::Doc },
            label: rng.random_range(0..labels),
        })
        .collect()
}

/// Relative error `|a - r| / |r|`, or `|a|` when the reference is below
/// `1e-30` (an exact zero up to the reference's own rounding).
pub fn relative_error_scalar(actual: f64, reference: f64) -> f64 {
    if reference.abs() < 1e-30 {
        actual.abs()
    } else {
        (actual - reference).abs() / reference.abs()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Norm-wise relative error `‖a - b‖ / max(‖a‖, ‖b‖)`; absolute when both
/// vectors are below `1e-8`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-8 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Loss evaluations carried out with a 128-bit mantissa.
pub struct Precise {
    p: usize,
    rm: RoundingMode,
    cc: Consts,
}

impl Default for Precise {
    fn default() -> Self {
        Self { p: 128, rm: RoundingMode::ToEven, cc: Consts::new().expect("constant cache") }
    }
}

impl Precise {
    fn num(&self, x: f64) -> BigFloat {
        BigFloat::from_f64(x, self.p)
    }

    fn add(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b, self.p, self.rm)
    }

    fn sub(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b, self.p, self.rm)
    }

    fn mul(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b, self.p, self.rm)
    }

    fn div(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.div(b, self.p, self.rm)
    }

    fn exp(&mut self, a: &BigFloat) -> BigFloat {
        a.exp(self.p, self.rm, &mut self.cc)
    }

    fn ln(&mut self, a: &BigFloat) -> BigFloat {
        a.ln(self.p, self.rm, &mut self.cc)
    }

    fn lt(a: &BigFloat, b: &BigFloat) -> bool {
        a.cmp(b).is_some_and(|c| c < 0)
    }

    pub fn to_f64(x: &BigFloat) -> f64 {
        format!("{x}").parse().expect("decimal rendering parses as f64")
    }

    fn dot(&self, a: &[BigFloat], b: &[BigFloat]) -> BigFloat {
        a.iter().zip(b).fold(self.num(0.0), |acc, (x, y)| self.add(&acc, &self.mul(x, y)))
    }

    fn vec(&self, v: &[f64]) -> Vec<BigFloat> {
        v.iter().map(|&x| self.num(x)).collect()
    }

    /// `qᵀ W d + b`, summed term by term.
    fn score(&self, m: &RerankerModel, q: &[f64], d: &[f64]) -> BigFloat {
        let mut s = self.num(m.bias);
        for (qi, row) in q.iter().zip(m.w.chunks_exact(m.dim)) {
            for (w, dj) in row.iter().zip(d) {
                let t = self.mul(&self.mul(&self.num(*qi), &self.num(*w)), &self.num(*dj));
                s = self.add(&s, &t);
            }
        }
        s
    }

    /// Mean negative log-likelihood, taken as one logarithm of the product
    /// of the clamped per-example likelihoods.
    pub fn point_loss(&mut self, m: &RerankerModel, batch: &[TrainExample]) -> f64 {
        let one = self.num(1.0);
        let lo = self.num(1e-7);
        let hi = self.sub(&one, &lo);
        let mut likelihood = self.num(1.0);
        for ex in batch {
            let s = self.score(m, &ex.q, &ex.d);
            let e = self.exp(&s.neg());
            let mut p = self.div(&one, &self.add(&one, &e));
            if Self::lt(&p, &lo) {
                p = lo.clone();
            }
            if Self::lt(&hi, &p) {
                p = hi.clone();
            }
            let term = if ex.label == 1 { p } else { self.sub(&one, &p) };
            likelihood = self.mul(&likelihood, &term);
        }
        let total = self.ln(&likelihood).neg();
        Self::to_f64(&self.div(&total, &self.num(batch.len() as f64)))
    }

    /// Per group, `ln Π (1 + e^{s_l} / e^{s_w})` over its pairs divided by the
    /// pair count; averaged over groups that have pairs.
    pub fn pair_loss(&mut self, m: &RerankerModel, groups: &[PairGroup]) -> f64 {
        let one = self.num(1.0);
        let mut total = self.num(0.0);
        let mut used = 0;
        for g in groups.iter().filter(|g| !g.pairs.is_empty()) {
            used += 1;
            let exps: Vec<BigFloat> = g
                .docs
                .iter()
                .map(|d| {
                    let s = self.score(m, &g.q, d);
                    self.exp(&s)
                })
                .collect();
            let mut product = self.num(1.0);
            for &(w, l) in &g.pairs {
                product = self.mul(&product, &self.add(&one, &self.div(&exps[l], &exps[w])));
            }
            let group = self.ln(&product);
            total = self.add(&total, &self.div(&group, &self.num(g.pairs.len() as f64)));
        }
        Self::to_f64(&self.div(&total, &self.num(used as f64)))
    }

    fn project(&mut self, m: &RerankerModel, item: &SclItem) -> Vec<BigFloat> {
        let v = self.vec(&item.v);
        let d = m.dim;
        let u: Vec<BigFloat> = (0..d)
            .map(|i| {
                let row: Vec<BigFloat> = (0..d)
                    .map(|j| match item.side {
                        Side::Doc => self.num(m.w[i * d + j]),
                        Side::Query => self.num(m.w[j * d + i]),
                    })
                    .collect();
                self.dot(&row, &v)
            })
            .collect();
        let mut r = self.dot(&u, &u).sqrt(self.p, self.rm);
        let floor = self.num(1e-12);
        if Self::lt(&r, &floor) {
            r = floor;
        }
        u.iter().map(|x| self.div(x, &r)).collect()
    }

    /// Supervised contrastive loss summed over anchors that have a partner.
    /// Each anchor contributes `ln(Σ_{k≠i} e^{s_ik}) - mean_p s_ip`.
    pub fn scl_loss(&mut self, m: &RerankerModel, batch: &[SclItem]) -> f64 {
        let h: Vec<Vec<BigFloat>> = batch.iter().map(|it| self.project(m, it)).collect();
        let tau = self.num(m.tau);
        let n = batch.len();
        let zero = self.num(0.0);
        let mut sims = vec![vec![zero.clone(); n]; n];
        let mut exps = vec![vec![zero.clone(); n]; n];
        for i in 0..n {
            for k in i + 1..n {
                let s = self.div(&self.dot(&h[i], &h[k]), &tau);
                let e = self.exp(&s);
                (sims[i][k], sims[k][i]) = (s.clone(), s);
                (exps[i][k], exps[k][i]) = (e.clone(), e);
            }
        }
        let mut total = zero.clone();
        for i in 0..n {
            let positives: Vec<usize> = (0..n).filter(|&p| p != i && batch[p].label == batch[i].label).collect();
            if positives.is_empty() {
                continue;
            }
            let denom = (0..n).filter(|&k| k != i).fold(zero.clone(), |acc, k| self.add(&acc, &exps[i][k]));
            let pos_sum = positives.iter().fold(zero.clone(), |acc, &p| self.add(&acc, &sims[i][p]));
            let mean_pos = self.div(&pos_sum, &self.num(positives.len() as f64));
            let log_denom = self.ln(&denom);
            total = self.add(&total, &self.sub(&log_denom, &mean_pos));
        }
        Self::to_f64(&total)
    }
}

/// Plain double loop over the contrastive loss definition in f64.
pub fn scl_loss_double_loop(m: &RerankerModel, batch: &[SclItem]) -> f64 {
    let d = m.dim;
    let h: Vec<Vec<f64>> = batch
        .iter()
        .map(|it| {
            let mut u = vec![0.0; d];
            for (i, ui) in u.iter_mut().enumerate() {
                for j in 0..d {
                    let w = if it.side == Side::Doc { m.w[i * d + j] } else { m.w[j * d + i] };
                    *ui += w * it.v[j];
                }
            }
            let r = norm(&u).max(1e-12);
            u.into_iter().map(|x| x / r).collect()
        })
        .collect();
    let sim = |a: usize, b: usize| h[a].iter().zip(&h[b]).map(|(x, y)| x * y).sum::<f64>() / m.tau;
    let n = batch.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut count = 0;
        let mut sum = 0.0;
        for p in 0..n {
            if p == i || batch[p].label != batch[i].label {
                continue;
            }
            let mut denom = 0.0;
            for k in 0..n {
                if k != i {
                    denom += sim(i, k).exp();
                }
            }
            sum += -(sim(i, p).exp() / denom).ln();
            count += 1;
        }
        if count > 0 {
            total += sum / count as f64;
        }
    }
    total
}

fn gram<G: AsRef<[f64]>>(grads: &[G]) -> Vec<Vec<f64>> {
    grads
        .iter()
        .map(|a| grads.iter().map(|b| a.as_ref().iter().zip(b.as_ref()).map(|(x, y)| x * y).sum()).collect())
        .collect()
}

fn quad(m: &[Vec<f64>], c: &[f64]) -> f64 {
    let mut s = 0.0;
    for (i, ci) in c.iter().enumerate() {
        for (j, cj) in c.iter().enumerate() {
            s += ci * cj * m[i][j];
        }
    }
    s
}

/// Minimum of `‖Σ c_t g_t‖²` over a regular simplex grid with `steps`
/// subdivisions per axis (T = 2 or 3), with the minimizing weights.
pub fn mgda_grid<G: AsRef<[f64]>>(grads: &[G], steps: usize) -> (f64, Vec<f64>) {
    let m = gram(grads);
    let s = steps as f64;
    let mut best = (f64::INFINITY, Vec::new());
    match grads.len() {
        2 => {
            for i in 0..=steps {
                let c = [i as f64 / s, (steps - i) as f64 / s];
                let v = quad(&m, &c);
                if v < best.0 {
                    best = (v, c.to_vec());
                }
            }
        }
        3 => {
            for i in 0..=steps {
                for j in 0..=steps - i {
                    let c = [i as f64 / s, j as f64 / s, (steps - i - j) as f64 / s];
                    let v = quad(&m, &c);
                    if v < best.0 {
                        best = (v, c.to_vec());
                    }
                }
            }
        }
        t => panic!("grid oracle supports 2 or 3 tasks, got {t}"),
    }
    best
}

/// A store of `n` rows. With `ties` the entries come from {-1, 0, 1} and a
/// quarter of the rows repeat an earlier row, so equal scores are common.
pub fn random_store(rng: &mut TestRng, n: usize, dim: usize, ties: bool) -> EmbeddingStore {
    let mut store = EmbeddingStore::new(dim).expect("positive dimension");
    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<f32> = if ties && i > 0 && rng.random_bool(0.25) {
            rows[rng.random_range(0..i)].clone()
        } else if ties {
            (0..dim).map(|_| rng.random_range(-1i8..=1) as f32).collect()
        } else {
            gaussian_vec(rng, dim, 1.0).into_iter().map(|x| x as f32).collect()
        };
        store.push(format!("doc{i}"), &row).expect("row has store dimension");
        rows.push(row);
    }
    store
}

/// Twenty queries for the scripted mock reader, laid out so that label
/// counts can be traced by hand.
///
/// Query `i` is memorized (answered correctly without documents) when
/// `i < 10`. Its subset documents at ranks 1, 25, 50, 100 follow pattern
/// `i % 5` over G (states the gold answer), W (states a wrong answer) and
/// N (states nothing):
///
/// | pattern | subset    |
/// |---------|-----------|
/// | 0       | G N N N   |
/// | 1       | W N N N   |
/// | 2       | G W N N   |
/// | 3       | N N N N   |
/// | 4       | N N N G   |
pub struct CategoryFixture {
    pub queries: Vec<QueryRecord>,
    pub corpus: Corpus,
    pub memory: Vec<(String, String)>,
}

pub fn category_fixture() -> CategoryFixture {
    const PATTERNS: [[char; 4]; 5] =
        [['G', 'N', 'N', 'N'], ['W', 'N', 'N', 'N'], ['G', 'W', 'N', 'N'], ['N'; 4], ['N', 'N', 'N', 'G']];
    let mut docs = Vec::new();
    let mut queries = Vec::new();
    let mut memory = Vec::new();
    for i in 0..20 {
        let gold = format!("ans{i:02}x");
        let text = format!("what is the code of item {i:02}");
        let mut retrieved = Vec::with_capacity(100);
        for rank in 1..=100usize {
            let slot = [1, 25, 50, 100].iter().position(|&r| r == rank);
            let kind = slot.map_or('N', |s| PATTERNS[i % 5][s]);
            let id = format!("q{i:02}r{rank:03}");
            let body = match kind {
                'G' => format!("Item {i:02} entry. The answer is {gold}."),
                'W' => format!("Item {i:02} entry. The answer is bad{i:02}y."),
                _ => format!("Filler note {rank} for item {i:02}."),
            };
            docs.push(Document::new(&id, format!("Item {i:02}"), body, vec![]));
            retrieved.push(Hit::new(id, 100.0 - rank as f32));
        }
        let mut q = QueryRecord::new(format!("q{i:02}"), &text, vec![gold.clone()], vec![]);
        q.retrieved = retrieved;
        if i < 10 {
            memory.push((text, gold));
        }
        queries.push(q);
    }
    CategoryFixture { queries, corpus: Corpus::new(docs).expect("unique ids"), memory }
}

/// Seed under which the pre-aligned golden places its document third.
pub const GOLDEN_SEED: u64 = 42;

pub fn golden_corpus() -> Corpus {
    Corpus::new(vec![
        Document::new("d1", "Dune (novel)", "Dune is a 1965 science fiction novel by Frank Herbert.", vec![]),
        Document::new(
            "d2",
            "Frank Herbert",
            "Franklin Patrick Herbert Jr. was an American science fiction author.",
            vec![],
        ),
        Document::new("d3", "Arrakis", "Arrakis is a desert planet.", vec![]),
    ])
    .expect("unique ids")
}

pub fn golden_query() -> QueryRecord {
    QueryRecord::new("q-dune", "who wrote the novel dune", vec!["Frank Herbert".into()], vec![])
}

/// A sample whose only preference document is `d1`, labelled `label`.
pub fn golden_sample(label: PreferenceLabel) -> PreferenceSample {
    let entry = |rank, doc_id: &str, label| SubsetEntry {
        rank,
        doc_id: doc_id.into(),
        label,
        retriever_score: 0.0,
        llm_score: None,
    };
    PreferenceSample {
        query_id: "q-dune".into(),
        subset: vec![
            entry(1, "d1", label),
            entry(25, "d2", PreferenceLabel::BothIncorrect),
            entry(50, "d3", PreferenceLabel::BothIncorrect),
            entry(100, "d3", PreferenceLabel::BothIncorrect),
        ],
        direct_correct: false,
        preference_order: vec![],
        extra: Extra::new(),
    }
}

/// Every golden file name with the text the current templates render for it.
pub fn golden_renders() -> Vec<(&'static str, String)> {
    let c = golden_corpus();
    let q = golden_query();
    let sft = emit_sft(&q, &["d1", "d2", "d3"], &c, 3, GOLDEN_SEED).expect("sft record");
    let pos =
        emit_prealigned(&golden_sample(PreferenceLabel::AlignedKnowledge), &q, &c, 3, GOLDEN_SEED).expect("record");
    let neg =
        emit_prealigned(&golden_sample(PreferenceLabel::UnalignedKnowledge), &q, &c, 3, GOLDEN_SEED).expect("record");
    let dune = c.view("d1").expect("d1");
    let arrakis = c.view("d3").expect("d3");
    vec![
        ("sft_prompt.txt", sft.prompt),
        ("prealigned_prompt.txt", pos.prompt),
        ("prealigned_target_positive.txt", pos.target),
        ("prealigned_prompt.txt", neg.prompt),
        ("prealigned_target_negative.txt", neg.target),
        ("augmentation_prompt.txt", augmentation_prompt(&q.query, &[dune], dune.title, Strategy::Sparql.requirement())),
        ("rating_prompt.txt", rating_prompt(&q.query, arrakis)),
        ("pairwise_prompt.txt", pairwise_prompt(&q.query, dune, arrakis)),
    ]
}

/// Every row index sorted by descending dot product, ties by ascending index.
pub fn full_sort_retrieve(query: &[f32], store: &EmbeddingStore) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = (0..store.len())
        .map(|i| (i, query.iter().zip(store.row(i)).map(|(&a, &b)| a as f64 * b as f64).sum()))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all
}

/// Pearson χ² statistic of `counts` against a uniform expectation.
pub fn chi_square_uniform(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let e = n as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

/// Upper-tail probability of a χ² statistic with two degrees of freedom.
pub fn chi_square_p_df2(stat: f64) -> f64 {
    (-stat / 2.0).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precise_softplus_matches_known_value() {
        let mut p = Precise::default();
        let x = p.num(-1.0);
        let e = p.exp(&x);
        let v = Precise::to_f64(&p.ln(&p.add(&p.num(1.0), &e)));
        assert!((v - 0.313_261_687_518_222_8).abs() < 1e-16);
    }

    #[test]
    fn grid_finds_simple_minimum() {
        let (v, c) = mgda_grid(&[vec![2.0, 0.0], vec![0.0, 1.0]], 1000);
        assert!((v - 0.8).abs() < 1e-12);
        assert!((c[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn differences_of_a_quadratic() {
        let g = central_difference(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 5.0], 1e-4);
        assert!(relative_error(&g, &[4.0, 3.0]) < 1e-9);
    }

    #[test]
    fn chi_square_of_uniform_counts_is_zero() {
        assert_eq!(chi_square_uniform(&[10, 10, 10]), 0.0);
        assert_eq!(chi_square_p_df2(0.0), 1.0);
    }
}
