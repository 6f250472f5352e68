//! The three alignment losses with analytic gradients.
//!
//! * point-wise: mean binary cross-entropy of `σ(score)` against the
//!   aligned/unaligned label, probabilities clamped to `[1e-7, 1 - 1e-7]`.
//! * pair-wise: per query, `softplus(-(s_w - s_l))` averaged over the query's
//!   pairs, then averaged over queries.
//! * contrastive: supervised contrastive loss over L2-normalized projections,
//!   summed over anchors; anchors without a same-label partner are skipped.

use std::borrow::Borrow;

use super::{RerankError, RerankerModel};

pub const PROB_CLAMP: f64 = 1e-7;
const NORM_FLOOR: f64 = 1e-12;

/// One (query, document, label) sample; label 1 marks aligned knowledge, 0 unaligned.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub query_id: String,
    pub doc_id: String,
    pub q: Vec<f64>,
    pub d: Vec<f64>,
    pub label: u8,
}

/// A query with its ranked documents and the (winner, loser) index pairs among them.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGroup {
    pub query_id: String,
    pub q: Vec<f64>,
    pub docs: Vec<Vec<f64>>,
    pub pairs: Vec<(usize, usize)>,
}

/// Which side of the bilinear form an item is projected through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `h = normalize(Wᵀ v)`
    Query,
    /// `h = normalize(W v)`
    Doc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SclItem {
    pub v: Vec<f64>,
    pub side: Side,
    pub label: usize,
}

/// Loss value and its gradient laid out as `[W.., b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow or cancellation.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `grad[W] += scale * a bᵀ`.
fn add_outer(grad: &mut [f64], a: &[f64], b: &[f64], scale: f64) {
    let d = b.len();
    for (ai, row) in a.iter().zip(grad.chunks_exact_mut(d)) {
        let f = scale * ai;
        if f == 0.0 {
            continue;
        }
        for (g, bj) in row.iter_mut().zip(b) {
            *g += f * bj;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn point_loss_grad<B: Borrow<TrainExample>>(model: &RerankerModel, batch: &[B]) -> Result<LossGrad, RerankError> {
    if batch.is_empty() {
        return Err(RerankError::EmptyBatch);
    }
    let n = batch.len() as f64;
    let dd = model.dim * model.dim;
    let mut grad = vec![0.0; model.param_len()];
    let mut loss = 0.0;
    let (lo, hi) = (PROB_CLAMP, 1.0 - PROB_CLAMP);
    for ex in batch {
        let ex = ex.borrow();
        model.check_dim(&ex.q)?;
        model.check_dim(&ex.d)?;
        let s = model.score(&ex.q, &ex.d);
        let p = sigmoid(s);
        let y = match ex.label {
            0 => 0.0,
            1 => 1.0,
            other => return Err(RerankError::BadLabel(other)),
        };
        let clamped = p < lo || p > hi;
        let pc = p.clamp(lo, hi);
        // Unclamped terms go through softplus: -ln σ(s) = softplus(-s), -ln(1-σ(s)) = softplus(s).
        loss += match (ex.label, clamped) {
            (1, false) => softplus(-s),
            (0, false) => softplus(s),
            (1, true) => -pc.ln(),
            _ => -(1.0 - pc).ln(),
        };
        if !clamped {
            let coef = (p - y) / n;
            add_outer(&mut grad[..dd], &ex.q, &ex.d, coef);
            grad[dd] += coef;
        }
    }
    Ok(LossGrad { loss: loss / n, grad })
}

pub fn pair_loss_grad<B: Borrow<PairGroup>>(model: &RerankerModel, groups: &[B]) -> Result<LossGrad, RerankError> {
    let dd = model.dim * model.dim;
    let mut grad = vec![0.0; model.param_len()];
    let mut loss = 0.0;
    let mut used = 0usize;
    for g in groups {
        let g = g.borrow();
        if g.pairs.is_empty() {
            continue;
        }
        model.check_dim(&g.q)?;
        for d in &g.docs {
            model.check_dim(d)?;
        }
        used += 1;
        let wq = model.apply_t(&g.q);
        let norm = 1.0 / g.pairs.len() as f64;
        let mut doc_grad = vec![0.0; model.dim];
        let mut group_loss = 0.0;
        for &(w, l) in &g.pairs {
            let (dw, dl) = match (g.docs.get(w), g.docs.get(l)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(RerankError::BadPair(w, l)),
            };
            let diff: Vec<f64> = dw.iter().zip(dl).map(|(a, b)| a - b).collect();
            let margin = dot(&wq, &diff);
            group_loss += softplus(-margin);
            let coef = -sigmoid(-margin) * norm;
            for (o, x) in doc_grad.iter_mut().zip(&diff) {
                *o += coef * x;
            }
        }
        loss += group_loss * norm;
        // Summed over groups here, divided by the group count below.
        add_outer(&mut grad[..dd], &g.q, &doc_grad, 1.0);
    }
    if used == 0 {
        return Err(RerankError::EmptyBatch);
    }
    let m = used as f64;
    grad.iter_mut().for_each(|v| *v /= m);
    Ok(LossGrad { loss: loss / m, grad })
}

fn project(model: &RerankerModel, item: &SclItem) -> (Vec<f64>, f64) {
    let u = match item.side {
        Side::Query => model.apply_t(&item.v),
        Side::Doc => model.apply(&item.v),
    };
    let r = dot(&u, &u).sqrt().max(NORM_FLOOR);
    (u.iter().map(|x| x / r).collect(), r)
}

pub fn scl_loss_grad<B: Borrow<SclItem>>(model: &RerankerModel, batch: &[B]) -> Result<LossGrad, RerankError> {
    if batch.len() < 2 {
        return Err(RerankError::SmallBatch(batch.len()));
    }
    if !(model.tau > 0.0 && model.tau.is_finite()) {
        return Err(RerankError::BadTemperature(model.tau));
    }
    let items: Vec<&SclItem> = batch.iter().map(Borrow::borrow).collect();
    for it in &items {
        model.check_dim(&it.v)?;
    }
    let n = items.len();
    let tau = model.tau;
    let (h, r): (Vec<Vec<f64>>, Vec<f64>) = items.iter().map(|it| project(model, it)).unzip();
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for k in i + 1..n {
            let s = dot(&h[i], &h[k]) / tau;
            sim[i * n + k] = s;
            sim[k * n + i] = s;
        }
    }

    let mut loss = 0.0;
    let mut dh = vec![vec![0.0; model.dim]; n];
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&j| j != i && items[j].label == items[i].label).collect();
        if positives.is_empty() {
            continue;
        }
        let row = &sim[i * n..(i + 1) * n];
        let inv_p = 1.0 / positives.len() as f64;
        for &j in &positives {
            // s_ij - ln Σ_{k≠i} e^{s_ik} = -ln(1 + Σ_{k∉{i,j}} e^{s_ik - s_ij})
            let rest: f64 = (0..n).filter(|&k| k != i && k != j).map(|k| (row[k] - row[j]).exp()).sum();
            loss += rest.ln_1p() * inv_p;
        }
        let max = (0..n).filter(|&k| k != i).map(|k| row[k]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..n).filter(|&k| k != i).map(|k| (row[k] - max).exp()).sum();
        for k in (0..n).filter(|&k| k != i) {
            let mut g = (row[k] - max).exp() / z;
            if items[k].label == items[i].label {
                g -= inv_p;
            }
            let g = g / tau;
            for c in 0..model.dim {
                dh[i][c] += g * h[k][c];
                dh[k][c] += g * h[i][c];
            }
        }
    }

    let dd = model.dim * model.dim;
    let mut grad = vec![0.0; model.param_len()];
    for i in 0..n {
        // Through h = u / |u|: du = (dh - h (h·dh)) / |u|.
        let proj = dot(&h[i], &dh[i]);
        let du: Vec<f64> = dh[i].iter().zip(&h[i]).map(|(g, hc)| (g - hc * proj) / r[i]).collect();
        match items[i].side {
            Side::Doc => add_outer(&mut grad[..dd], &du, &items[i].v, 1.0),
            Side::Query => add_outer(&mut grad[..dd], &items[i].v, &du, 1.0),
        }
    }
    Ok(LossGrad { loss, grad })
}
