//! Min-norm task weighting over the probability simplex.
//!
//! Finds `c` minimizing `|Σ c_t g_t|²` subject to `c ≥ 0, Σ c = 1`. Work is done
//! on the Gram matrix `M_st = g_s · g_t`. Up to [`EXACT_MAX_TASKS`] tasks the
//! minimizer is found exactly by checking every face of the simplex: vertices,
//! edges in closed form, larger faces through their KKT system. Beyond that,
//! the best edge seeds a pairwise Frank-Wolfe loop whose steps use the exact
//! clipped line search along `e_s - e_a`.

use super::RerankError;

pub const EXACT_MAX_TASKS: usize = 6;
pub const MAX_ITERATIONS: usize = 250;
pub const GAP_TOLERANCE: f64 = 1e-10;

/// Non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskWeights(Vec<f64>);

impl TaskWeights {
    pub fn new(c: Vec<f64>) -> Result<Self, RerankError> {
        if c.is_empty() {
            return Err(RerankError::NoTasks);
        }
        if c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(RerankError::BadWeights(format!("{c:?} has a negative or non-finite entry")));
        }
        let sum: f64 = c.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(RerankError::BadWeights(format!("{c:?} sums to {sum}")));
        }
        Ok(Self(c))
    }

    pub fn uniform(t: usize) -> Self {
        Self(vec![1.0 / t as f64; t])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MgdaResult {
    pub weights: TaskWeights,
    /// `|Σ c_t g_t|²` at the returned weights.
    pub min_norm_sq: f64,
    pub iterations: usize,
    /// Frank-Wolfe duality gap `cᵀMc - min_t (Mc)_t` at exit.
    pub gap: f64,
    /// Every gradient was zero; the weights are uniform by convention.
    pub degenerate: bool,
}

fn gram<G: AsRef<[f64]>>(grads: &[G]) -> Vec<Vec<f64>> {
    let t = grads.len();
    let mut m = vec![vec![0.0; t]; t];
    for i in 0..t {
        for j in i..t {
            let v: f64 = grads[i].as_ref().iter().zip(grads[j].as_ref()).map(|(a, b)| a * b).sum();
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

/// Closed-form minimizer of `|γ g_i + (1-γ) g_j|²` over γ ∈ [0, 1]; returns (γ, value).
pub fn two_task(m_ii: f64, m_ij: f64, m_jj: f64) -> (f64, f64) {
    let denom = m_ii + m_jj - 2.0 * m_ij;
    let gamma = if denom > 0.0 {
        ((m_jj - m_ij) / denom).clamp(0.0, 1.0)
    } else if m_ii <= m_jj {
        1.0
    } else {
        0.0
    };
    let value = gamma * gamma * m_ii + 2.0 * gamma * (1.0 - gamma) * m_ij + (1.0 - gamma) * (1.0 - gamma) * m_jj;
    (gamma, value)
}

fn quad(m: &[Vec<f64>], c: &[f64]) -> (Vec<f64>, f64) {
    let mc: Vec<f64> = m.iter().map(|row| row.iter().zip(c).map(|(a, b)| a * b).sum()).collect();
    let q = mc.iter().zip(c).map(|(a, b)| a * b).sum();
    (mc, q)
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting; `None`
/// when a pivot is negligible against the largest entry.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[p][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for k in col..n {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - tail) / a[r][r];
    }
    Some(x)
}

/// Minimizer of `cᵀMc` over the affine hull of the face `support`, if it is
/// unique and lies in the face.
fn face_minimizer(m: &[Vec<f64>], support: &[usize]) -> Option<Vec<f64>> {
    let k = support.len();
    // M normalized by its largest diagonal entry; the minimizer is unchanged.
    let unit = support.iter().map(|&i| m[i][i]).fold(0.0f64, f64::max);
    if unit == 0.0 {
        return None;
    }
    let mut a = vec![vec![0.0; k + 1]; k + 1];
    for (r, &i) in support.iter().enumerate() {
        for (col, &j) in support.iter().enumerate() {
            a[r][col] = m[i][j] / unit;
        }
        a[r][k] = 1.0;
        a[k][r] = 1.0;
    }
    let mut rhs = vec![0.0; k + 1];
    rhs[k] = 1.0;
    let x = solve(a, rhs)?;
    if x[..k].iter().any(|&v| v < 0.0) {
        return None;
    }
    let mut c = vec![0.0; m.len()];
    for (&i, &v) in support.iter().zip(&x) {
        c[i] = v;
    }
    Some(c)
}

/// Best point over every face of the simplex. The global minimizer lies in
/// the relative interior of some face; if that face's KKT system is singular
/// the minimum is also attained on a smaller face.
fn exact(m: &[Vec<f64>]) -> Vec<f64> {
    let t = m.len();
    let mut best = (f64::INFINITY, Vec::new());
    for mask in 1u32..(1 << t) {
        let support: Vec<usize> = (0..t).filter(|&i| mask & (1 << i) != 0).collect();
        let c = match support[..] {
            [i] => {
                let mut c = vec![0.0; t];
                c[i] = 1.0;
                Some(c)
            }
            [i, j] => {
                let (gamma, _) = two_task(m[i][i], m[i][j], m[j][j]);
                let mut c = vec![0.0; t];
                c[i] = gamma;
                c[j] = 1.0 - gamma;
                Some(c)
            }
            _ => face_minimizer(m, &support),
        };
        if let Some(c) = c {
            let (_, q) = quad(m, &c);
            if q < best.0 {
                best = (q, c);
            }
        }
    }
    best.1
}

fn finish(m: &[Vec<f64>], mut c: Vec<f64>, iterations: usize) -> Result<MgdaResult, RerankError> {
    let sum: f64 = c.iter().sum();
    c.iter_mut().for_each(|v| *v /= sum);
    let (mc, q) = quad(m, &c);
    let min_norm_sq = q.max(0.0);
    let gap = min_norm_sq - mc.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(MgdaResult { weights: TaskWeights::new(c)?, min_norm_sq, iterations, gap, degenerate: false })
}

pub fn mgda_weights<G: AsRef<[f64]>>(grads: &[G]) -> Result<MgdaResult, RerankError> {
    let t = grads.len();
    if t == 0 {
        return Err(RerankError::NoTasks);
    }
    let dim = grads[0].as_ref().len();
    if let Some(g) = grads.iter().find(|g| g.as_ref().len() != dim) {
        return Err(RerankError::LengthMismatch { left: dim, right: g.as_ref().len() });
    }
    if grads.iter().flat_map(|g| g.as_ref()).any(|v| !v.is_finite()) {
        return Err(RerankError::BadWeights("non-finite task gradient".into()));
    }
    let m = gram(grads);
    if (0..t).all(|i| m[i][i] == 0.0) {
        return Ok(MgdaResult {
            weights: TaskWeights::uniform(t),
            min_norm_sq: 0.0,
            iterations: 0,
            gap: 0.0,
            degenerate: true,
        });
    }
    if t == 1 {
        return Ok(MgdaResult {
            weights: TaskWeights(vec![1.0]),
            min_norm_sq: m[0][0],
            iterations: 0,
            gap: 0.0,
            degenerate: false,
        });
    }

    if t <= EXACT_MAX_TASKS {
        return finish(&m, exact(&m), 0);
    }

    let mut c = vec![0.0; t];
    let mut best = f64::INFINITY;
    for i in 0..t {
        for j in i + 1..t {
            let (gamma, value) = two_task(m[i][i], m[i][j], m[j][j]);
            if value < best {
                best = value;
                c.iter_mut().for_each(|v| *v = 0.0);
                c[i] = gamma;
                c[j] = 1.0 - gamma;
            }
        }
    }

    let mut iterations = 0;
    loop {
        let (mc, q) = quad(&m, &c);
        let s = (0..t).fold(0, |b, k| if mc[k] < mc[b] { k } else { b });
        if q - mc[s] < GAP_TOLERANCE || iterations >= MAX_ITERATIONS {
            break;
        }
        // Away vertex: the worst direction currently carrying weight.
        let a = (0..t).filter(|&k| c[k] > 0.0).fold(s, |b, k| if b == s || mc[k] > mc[b] { k } else { b });
        if a == s {
            break;
        }
        let curvature = m[s][s] + m[a][a] - 2.0 * m[s][a];
        let slope = mc[a] - mc[s];
        let step = if curvature > 0.0 { (slope / curvature).min(c[a]) } else { c[a] };
        if !(step > 0.0) {
            break;
        }
        c[s] += step;
        c[a] -= step;
        if c[a] < 0.0 {
            c[a] = 0.0;
        }
        iterations += 1;
    }

    finish(&m, c, iterations)
}

/// `Σ c_t g_t`.
pub fn combine<G: AsRef<[f64]>>(weights: &[f64], grads: &[G]) -> Vec<f64> {
    let dim = grads.first().map_or(0, |g| g.as_ref().len());
    let mut out = vec![0.0; dim];
    for (c, g) in weights.iter().zip(grads) {
        for (o, v) in out.iter_mut().zip(g.as_ref()) {
            *o += c * v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_task() {
        let r = mgda_weights(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(r.weights.as_slice(), &[1.0]);
    }

    #[test]
    fn opposed_gradients_cancel() {
        let r = mgda_weights(&[vec![1.0, -2.0], vec![-1.0, 2.0]]).unwrap();
        assert_eq!(r.weights.as_slice(), &[0.5, 0.5]);
        assert_eq!(r.min_norm_sq, 0.0);
    }

    #[test]
    fn orthogonal_pair() {
        let r = mgda_weights(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let c = r.weights.as_slice();
        assert!((c[0] - 0.2).abs() < 1e-12 && (c[1] - 0.8).abs() < 1e-12, "{c:?}");
        assert!((r.min_norm_sq - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_gradients_are_degenerate() {
        let r = mgda_weights(&[vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.weights, TaskWeights::uniform(3));
    }

    #[test]
    fn three_tasks_reach_interior_optimum() {
        // Three unit vectors 120° apart: the centroid is the origin.
        let s = 3f64.sqrt() / 2.0;
        let r = mgda_weights(&[vec![1.0, 0.0], vec![-0.5, s], vec![-0.5, -s]]).unwrap();
        assert!(r.min_norm_sq < 1e-10, "{r:?}");
        for c in r.weights.as_slice() {
            assert!((c - 1.0 / 3.0).abs() < 1e-5);
        }
    }

    #[test]
    fn many_tasks_use_frank_wolfe() {
        let grads: Vec<Vec<f64>> =
            (0..8).map(|i| vec![(1.0 + 0.2 * i as f64) * (1.3 * i as f64).cos(), (1.3 * i as f64).sin(), 0.3]).collect();
        let fw = mgda_weights(&grads).unwrap();
        assert!(fw.iterations > 0);
        assert!(fw.gap < 1e-8, "{fw:?}");
        let exact_c = exact(&gram(&grads));
        let (_, q) = quad(&gram(&grads), &exact_c);
        assert!((fw.min_norm_sq - q).abs() < 1e-8, "{} vs {q}", fw.min_norm_sq);
    }

    #[test]
    fn singular_interior_face_falls_back_to_an_edge() {
        // g3 = (g1 + g2) / 2, so the full face is degenerate.
        let r = mgda_weights(&[vec![1.0, 1.0], vec![1.0, -1.0], vec![1.0, 0.0]]).unwrap();
        assert!((r.min_norm_sq - 1.0).abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn weight_validation() {
        assert!(TaskWeights::new(vec![0.5, 0.5]).is_ok());
        assert!(TaskWeights::new(vec![0.6, 0.6]).is_err());
        assert!(TaskWeights::new(vec![-0.1, 1.1]).is_err());
        assert!(mgda_weights(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
