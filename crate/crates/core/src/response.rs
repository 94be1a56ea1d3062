//! Linear response by linearized message passing, marginal covariances and
//! their differences.

use std::collections::BTreeMap;

use crate::error::{ConstraintError, InferenceError};
use crate::inference::{InferenceState, Problem, Term};
use crate::linalg::Matrix;
use crate::oracle::PairBlock;
use crate::scalar::Real;

/// Perturbation direction `Σ_y w_y ν_{var,y}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTarget {
    pub var: usize,
    pub weights: Vec<f64>,
}

impl ResponseTarget {
    pub fn indicator(var: usize, state: usize, card: usize) -> Self {
        let mut weights = vec![0.0; card];
        weights[state] = 1.0;
        Self { var, weights }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClspOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Solve the linear system directly when iteration fails.
    pub dense_fallback: bool,
    /// Skip iteration and always solve directly.
    pub force_dense: bool,
}

impl Default for ClspOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iter: 10_000, dense_fallback: true, force_dense: false }
    }
}

/// Converged response of one target.
#[derive(Debug, Clone)]
pub struct TargetResponse<R> {
    pub target: ResponseTarget,
    /// `δq̂_α` per outer region.
    pub dq: Vec<Vec<R>>,
    /// `δμ̂_{β→α}` per containment edge.
    pub down: Vec<Vec<R>>,
    pub converged: bool,
    pub iterations: usize,
    pub dense: bool,
}

impl<R: Real> TargetResponse<R> {
    /// `Σ_x q_α(x) δq̂_α(x) f(x)` in region `a`.
    pub fn contract(&self, st: &InferenceState<R>, a: usize, f: &[f64]) -> R {
        st.outer[a].iter().zip(&self.dq[a]).zip(f).map(|((lq, d), &v)| lq.exp() * *d * R::lit(v)).sum()
    }
}

/// Per-target responses of one run.
#[derive(Debug, Clone)]
pub struct ResponseState<R> {
    pub targets: Vec<TargetResponse<R>>,
}

/// Region-local response solve: the multiplier feedback through the
/// statistic means is a small dense system.
pub(crate) struct RegionResponse<R> {
    q: Vec<R>,
    g: Vec<Vec<R>>,
    h: Vec<Vec<R>>,
    system: Option<Matrix<R>>,
}

impl<R: Real> RegionResponse<R> {
    pub(crate) fn new(log_q: &[R], terms: &[&Term], lambda: &[R]) -> Self {
        let q: Vec<R> = log_q.iter().map(|v| v.exp()).collect();
        let active: Vec<usize> = (0..terms.len()).filter(|&c| !lambda[c].is_inert_zero()).collect();
        if active.is_empty() {
            return Self { q, g: Vec::new(), h: Vec::new(), system: None };
        }
        let mut g: Vec<Vec<R>> = Vec::new();
        let mut h: Vec<Vec<R>> = Vec::new();
        for &c in &active {
            let t = terms[c];
            let f1: Vec<R> = t.f1.iter().map(|&v| R::lit(v)).collect();
            let f2: Vec<R> = t.f2.iter().map(|&v| R::lit(v)).collect();
            h.push(f2.iter().map(|&v| lambda[c] * v).collect());
            h.push(f1.iter().map(|&v| lambda[c] * v).collect());
            g.push(f1);
            g.push(f2);
        }
        let n = g.len();
        let mut m = Matrix::identity(n);
        for k in 0..n {
            for l in 0..n {
                m[(k, l)] -= cov(&q, &g[k], &h[l]);
            }
        }
        Self { q, g, h, system: Some(m) }
    }

    /// `δq̂ = center(r + Σ_l u_l h_l)` with `u` solving the moment feedback.
    pub(crate) fn solve(&self, r: &[R]) -> Result<Vec<R>, InferenceError> {
        let mut out = r.to_vec();
        if let Some(m) = &self.system {
            let rhs: Vec<R> = self.g.iter().map(|g| cov(&self.q, g, r)).collect();
            let u = m
                .solve(&rhs)
                .ok_or_else(|| InferenceError::Response("singular region response system".into()))?;
            for (ul, hl) in u.iter().zip(&self.h) {
                for (o, v) in out.iter_mut().zip(hl) {
                    *o += *ul * *v;
                }
            }
        }
        center(&self.q, &mut out);
        Ok(out)
    }
}

fn cov<R: Real>(q: &[R], a: &[R], b: &[R]) -> R {
    let ma: R = q.iter().zip(a).map(|(p, v)| *p * *v).sum();
    let mb: R = q.iter().zip(b).map(|(p, v)| *p * *v).sum();
    q.iter().zip(a).zip(b).map(|((p, x), y)| *p * *x * *y).sum::<R>() - ma * mb
}

fn center<R: Real>(q: &[R], v: &mut [R]) {
    let m: R = q.iter().zip(v.iter()).map(|(p, x)| *p * *x).sum();
    for x in v.iter_mut() {
        *x -= m;
    }
}

/// Source term `w(x_i)/k_i` of a target in region `a` (zero if `i ∉ α`).
pub fn source<R: Real>(p: &Problem<R>, a: usize, target: &ResponseTarget) -> Vec<R> {
    let ol = &p.layout.outer[a];
    match ol.position(target.var) {
        None => vec![R::zero(); ol.size],
        Some(pos) => {
            let k = p.layout.degree(target.var) as f64;
            (0..ol.size).map(|x| R::lit(target.weights[ol.states[pos][x]] / k)).collect()
        }
    }
}

/// `r(x) = source(x) + Σ_β δμ̂_{β→α}(x_β)` for region `a`.
pub fn region_rhs<R: Real>(p: &Problem<R>, a: usize, src: &[R], down: &[Vec<R>]) -> Vec<R> {
    let mut r = src.to_vec();
    for &e in &p.layout.outer_edges[a] {
        let el = &p.layout.edges[e];
        for (x, v) in r.iter_mut().enumerate() {
            *v += down[e][el.proj[x]];
        }
    }
    r
}

struct Sweeper<'a, R: Real> {
    p: &'a Problem<R>,
    st: &'a InferenceState<R>,
    regions: Vec<RegionResponse<R>>,
    sources: Vec<Vec<R>>,
    q_inner: Vec<Vec<R>>,
    /// `q_α(x_β)` per edge.
    q_edge: Vec<Vec<R>>,
    q_outer: Vec<Vec<R>>,
}

impl<'a, R: Real> Sweeper<'a, R> {
    fn new(p: &'a Problem<R>, st: &'a InferenceState<R>, lambda: &[R], target: &ResponseTarget) -> Result<Self, InferenceError> {
        let lay = &p.layout;
        let mut regions = Vec::with_capacity(lay.outer.len());
        for a in 0..lay.outer.len() {
            let ids = &p.region_terms[a];
            let terms: Vec<&Term> = ids.iter().map(|&c| &p.terms[c]).collect();
            let lam: Vec<R> = ids.iter().map(|&c| lambda[c]).collect();
            regions.push(RegionResponse::new(&st.outer[a], &terms, &lam));
        }
        let sources = (0..lay.outer.len()).map(|a| source(p, a, target)).collect();
        let q_outer: Vec<Vec<R>> = st.outer.iter().map(|v| v.iter().map(|x| x.exp()).collect()).collect();
        let q_edge = lay
            .edges
            .iter()
            .map(|el| {
                let mut m = vec![R::zero(); lay.inner[el.inner].size];
                for (x, &pr) in q_outer[el.outer].iter().enumerate() {
                    m[el.proj[x]] += pr;
                }
                m
            })
            .collect();
        let q_inner = st.inner.iter().map(|v| v.iter().map(|x| x.exp()).collect()).collect();
        Ok(Self { p, st, regions, sources, q_inner, q_edge, q_outer })
    }

    fn region(&self, a: usize, down: &[Vec<R>]) -> Result<Vec<R>, InferenceError> {
        let r = region_rhs(self.p, a, &self.sources[a], down);
        self.regions[a].solve(&r)
    }

    /// One full sweep; affine in `down`.
    fn sweep(&self, down: &mut [Vec<R>]) -> Result<f64, InferenceError> {
        let lay = &self.p.layout;
        let mut dq: Vec<Vec<R>> = (0..lay.outer.len()).map(|a| self.region(a, down)).collect::<Result<_, _>>()?;
        let mut up = vec![Vec::new(); lay.edges.len()];
        let mut change = 0.0f64;
        for (b, il) in lay.inner.iter().enumerate() {
            let mut acc = vec![R::zero(); il.size];
            for &e in &il.edges {
                let el = &lay.edges[e];
                let mut m = vec![R::zero(); il.size];
                for (x, &pr) in self.q_outer[el.outer].iter().enumerate() {
                    m[el.proj[x]] += pr * dq[el.outer][x];
                }
                let mut u: Vec<R> = m
                    .iter()
                    .zip(&self.q_edge[e])
                    .zip(&down[e])
                    .map(|((&s, &qm), &d)| if qm > R::zero() { s / qm - d } else { R::zero() })
                    .collect();
                center(&self.q_inner[b], &mut u);
                for (s, v) in acc.iter_mut().zip(&u) {
                    *s += *v;
                }
                up[e] = u;
            }
            let kc = R::lit((il.edges.len() as i64 + il.counting) as f64);
            for v in acc.iter_mut() {
                *v /= kc;
            }
            center(&self.q_inner[b], &mut acc);
            for &e in &il.edges {
                let a = lay.edges[e].outer;
                let nd: Vec<R> = acc.iter().zip(&up[e]).map(|(&x, &u)| x - u).collect();
                for (o, n) in down[e].iter().zip(&nd) {
                    let diff = (*o - *n).abs().value();
                    change = if diff.is_nan() { f64::INFINITY } else { change.max(diff) };
                }
                down[e] = nd;
                dq[a] = self.region(a, down)?;
            }
        }
        let _ = self.st;
        Ok(change)
    }

    fn flatten(down: &[Vec<R>]) -> Vec<R> {
        down.iter().flatten().copied().collect()
    }

    fn unflatten(&self, v: &[R]) -> Vec<Vec<R>> {
        let mut out = Vec::with_capacity(self.p.layout.edges.len());
        let mut k = 0;
        for el in &self.p.layout.edges {
            let n = self.p.layout.inner[el.inner].size;
            out.push(v[k..k + n].to_vec());
            k += n;
        }
        out
    }

    /// Fixed point of the affine sweep map by a dense solve.
    fn dense(&self) -> Result<Vec<Vec<R>>, InferenceError> {
        let zero: Vec<Vec<R>> = self.p.layout.edges.iter().map(|el| vec![R::zero(); self.p.layout.inner[el.inner].size]).collect();
        let n: usize = zero.iter().map(|v| v.len()).sum();
        if n >= 10_000 {
            return Err(InferenceError::Response(format!("dense response system too large ({n} unknowns)")));
        }
        let mut b0 = zero.clone();
        self.sweep(&mut b0)?;
        let b = Self::flatten(&b0);
        let mut m = Matrix::identity(n);
        for k in 0..n {
            let mut e = vec![R::zero(); n];
            e[k] = R::one();
            let mut d = self.unflatten(&e);
            self.sweep(&mut d)?;
            let col = Self::flatten(&d);
            for r in 0..n {
                m[(r, k)] -= col[r] - b[r];
            }
        }
        let x = m
            .solve(&b)
            .or_else(|| m.solve_least_squares(&b, R::lit(1e-14)))
            .ok_or_else(|| InferenceError::Response("singular dense response system".into()))?;
        Ok(self.unflatten(&x))
    }
}

const STALL_WINDOW: usize = 200;

/// Response of one target.
pub fn clsp_target<R: Real>(
    p: &Problem<R>,
    st: &InferenceState<R>,
    lambda: &[R],
    target: &ResponseTarget,
    opts: &ClspOptions,
) -> Result<TargetResponse<R>, InferenceError> {
    clsp_target_from(p, st, lambda, target, None, opts)
}

/// Response of one target, iterating from given response messages.
pub fn clsp_target_from<R: Real>(
    p: &Problem<R>,
    st: &InferenceState<R>,
    lambda: &[R],
    target: &ResponseTarget,
    init: Option<&[Vec<R>]>,
    opts: &ClspOptions,
) -> Result<TargetResponse<R>, InferenceError> {
    p.check_lambda(lambda)?;
    if target.var >= p.layout.num_vars() || target.weights.len() != p.layout.cards[target.var] {
        return Err(InferenceError::Response(format!("invalid target on variable {}", target.var)));
    }
    let sw = Sweeper::new(p, st, lambda, target)?;
    let mut down: Vec<Vec<R>> = match init {
        Some(d) if d.len() == p.layout.edges.len() => d.to_vec(),
        _ => p.layout.edges.iter().map(|el| vec![R::zero(); p.layout.inner[el.inner].size]).collect(),
    };
    let mut converged = false;
    let mut iterations = 0;
    if !opts.force_dense {
        let mut checkpoint = f64::INFINITY;
        for it in 1..=opts.max_iter {
            iterations = it;
            let c = sw.sweep(&mut down)?;
            if !c.is_finite() {
                break;
            }
            if c <= opts.tol {
                converged = true;
                break;
            }
            // Hand slow or divergent iterations to the dense solve early.
            if it % STALL_WINDOW == 0 {
                if c > 0.5 * checkpoint {
                    break;
                }
                checkpoint = c;
            }
        }
    }
    let mut dense = false;
    if !converged && (opts.dense_fallback || opts.force_dense) {
        down = sw.dense()?;
        dense = true;
        converged = true;
    }
    let dq = (0..p.layout.outer.len()).map(|a| sw.region(a, &down)).collect::<Result<_, _>>()?;
    Ok(TargetResponse { target: target.clone(), dq, down, converged, iterations, dense })
}

/// Responses for indicator targets `(i, y)` and the assembled χ rows.
pub fn clsp<R: Real>(
    p: &Problem<R>,
    st: &InferenceState<R>,
    lambda: &[R],
    targets: &[(usize, usize)],
    opts: &ClspOptions,
) -> Result<(ResponseState<R>, ChiMatrix), InferenceError> {
    let cards = &p.layout.cards;
    let mut out = Vec::with_capacity(targets.len());
    let mut chi = ChiMatrix { cards: cards.clone(), rows: BTreeMap::new() };
    for &(i, y) in targets {
        if i >= cards.len() || y >= cards[i] {
            return Err(InferenceError::Response(format!("target ({i}, {y}) out of range")));
        }
        let r = clsp_target(p, st, lambda, &ResponseTarget::indicator(i, y, cards[i]), opts)?;
        let row = (0..cards.len())
            .map(|j| {
                let a = p.layout.var_outer[j][0];
                let ol = &p.layout.outer[a];
                let pos = ol.position(j).unwrap();
                let mut v = vec![0.0; cards[j]];
                for x in 0..ol.size {
                    v[ol.states[pos][x]] += (st.outer[a][x].exp() * r.dq[a][x]).value();
                }
                v
            })
            .collect();
        chi.rows.insert((i, y), row);
        out.push(r);
    }
    Ok((ResponseState { targets: out }, chi))
}

/// Every indicator target of the listed variables.
pub fn all_targets(cards: &[usize], vars: impl IntoIterator<Item = usize>) -> Vec<(usize, usize)> {
    vars.into_iter().flat_map(|i| (0..cards[i]).map(move |y| (i, y))).collect()
}

/// Linear-response rows `χ_{(i,y),(j,y2)}` for the computed targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiMatrix {
    pub cards: Vec<usize>,
    pub rows: BTreeMap<(usize, usize), Vec<Vec<f64>>>,
}

impl ChiMatrix {
    pub fn get(&self, i: usize, y: usize, j: usize, y2: usize) -> Option<f64> {
        self.rows.get(&(i, y)).map(|r| r[j][y2])
    }

    /// Full block when every state of `i` has a row.
    pub fn block(&self, i: usize, j: usize) -> Option<PairBlock> {
        let mut b = PairBlock::zeros(i, j, self.cards[i], self.cards[j]);
        for y in 0..self.cards[i] {
            let row = self.rows.get(&(i, y))?;
            for y2 in 0..self.cards[j] {
                b.set(y, y2, row[j][y2]);
            }
        }
        Some(b)
    }

    /// Max `|χ_{(i,y),(j,y2)} − χ_{(j,y2),(i,y)}|` over entries with both rows present.
    pub fn symmetry_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (&(i, y), row) in &self.rows {
            for (j, r) in row.iter().enumerate() {
                for (y2, v) in r.iter().enumerate() {
                    if let Some(w) = self.get(j, y2, i, y) {
                        worst = worst.max((v - w).abs());
                    }
                }
            }
        }
        worst
    }

    /// Max `|Σ_{y2} χ_{(i,y),(j,y2)}|`, plus the column sums over complete row sets.
    pub fn block_sum_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for row in self.rows.values() {
            for r in row {
                worst = worst.max(r.iter().sum::<f64>().abs());
            }
        }
        for i in 0..self.cards.len() {
            for j in 0..self.cards.len() {
                if let Some(b) = self.block(i, j) {
                    for y2 in 0..b.card_j {
                        worst = worst.max((0..b.card_i).map(|y| b.get(y, y2)).sum::<f64>().abs());
                    }
                }
            }
        }
        worst
    }
}

/// Marginal covariances from region beliefs.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    pub blocks: Vec<PairBlock>,
}

impl CMatrix {
    pub fn block(&self, i: usize, j: usize) -> Option<&PairBlock> {
        self.blocks.iter().find(|b| b.i == i && b.j == j)
    }
}

/// Indicator covariance block of `(i, j)` under the belief of region `a`.
pub fn region_covariance<R: Real>(p: &Problem<R>, st: &InferenceState<R>, a: usize, i: usize, j: usize) -> PairBlock {
    let ol = &p.layout.outer[a];
    let (pi, pj) = (ol.position(i).unwrap(), ol.position(j).unwrap());
    let (ci, cj) = (p.layout.cards[i], p.layout.cards[j]);
    let mut joint = PairBlock::zeros(i, j, ci, cj);
    let mut mi = vec![0.0; ci];
    let mut mj = vec![0.0; cj];
    for x in 0..ol.size {
        let q = st.outer[a][x].exp().value();
        let (y, y2) = (ol.states[pi][x], ol.states[pj][x]);
        if i != j {
            joint.set(y, y2, joint.get(y, y2) + q);
        }
        mi[y] += q;
        mj[y2] += q;
    }
    let mut b = PairBlock::zeros(i, j, ci, cj);
    for y in 0..ci {
        for y2 in 0..cj {
            let e = if i == j { if y == y2 { mi[y] } else { 0.0 } } else { joint.get(y, y2) };
            b.set(y, y2, e - mi[y] * mj[y2]);
        }
    }
    b
}

/// `V_{q_α}(δ_{x_i,y}, δ_{x_j,y2})` from the first outer region covering each pair.
pub fn marginal_covariance<R: Real>(
    p: &Problem<R>,
    st: &InferenceState<R>,
    pairs: &[(usize, usize)],
) -> Result<CMatrix, ConstraintError> {
    let blocks = pairs
        .iter()
        .map(|&(i, j)| {
            let a = p.layout.covering_region(&[i, j]).ok_or(ConstraintError::Uncovered(i, j))?;
            Ok(region_covariance(p, st, a, i, j))
        })
        .collect::<Result<_, ConstraintError>>()?;
    Ok(CMatrix { blocks })
}

/// One constrained statistic pair `V(φ_i(x_i), φ_j(x_j))`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticPair {
    pub i: usize,
    pub phi_i: Vec<f64>,
    pub j: usize,
    pub phi_j: Vec<f64>,
}

impl StatisticPair {
    /// `φ_iᵀ B φ_j` for an indicator-basis block of `(i, j)`.
    pub fn contract(&self, b: &PairBlock) -> f64 {
        let mut s = 0.0;
        for (y, a) in self.phi_i.iter().enumerate() {
            for (y2, c) in self.phi_j.iter().enumerate() {
                s += a * c * b.get(y, y2);
            }
        }
        s
    }
}

/// `Δ = C − χ` per constraint, tagged with its region.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationVector {
    pub values: Vec<f64>,
    pub regions: Vec<usize>,
}

impl ViolationVector {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
    }

    /// Constraint ids and values grouped by region, ascending.
    pub fn by_region(&self) -> BTreeMap<usize, Vec<(usize, f64)>> {
        let mut m: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for (c, (&v, &r)) in self.values.iter().zip(&self.regions).enumerate() {
            m.entry(r).or_default().push((c, v));
        }
        m
    }
}

/// Constraint violations from indicator-basis `C` and `χ`.
pub fn violation(
    c: &CMatrix,
    chi: &ChiMatrix,
    constraints: &[StatisticPair],
    regions: &[usize],
) -> Result<ViolationVector, ConstraintError> {
    if constraints.len() != regions.len() {
        return Err(ConstraintError::Inference(InferenceError::Response(format!(
            "{} constraints but {} regions",
            constraints.len(),
            regions.len()
        ))));
    }
    let mut values = Vec::with_capacity(constraints.len());
    for s in constraints {
        let cb = c.block(s.i, s.j).ok_or(ConstraintError::Uncovered(s.i, s.j))?;
        let xb = chi.block(s.i, s.j).ok_or_else(|| {
            ConstraintError::Inference(InferenceError::Response(format!("no response rows for variable {}", s.i)))
        })?;
        values.push(s.contract(cb) - s.contract(&xb));
    }
    Ok(ViolationVector { values, regions: regions.to_vec() })
}
