//! Exact reference statistics by full enumeration.

use crate::error::OracleError;
use crate::graph_model::{FactorGraph, FactorTable};
use crate::scalar::Real;

/// Default cap on the number of enumerated configurations.
pub const DEFAULT_STATE_CAP: f64 = (1u64 << 24) as f64;

/// Covariance-like block between variables `i` and `j` in the indicator basis:
/// `values[y + card_i * y2]` is the entry for `(δ_{x_i,y}, δ_{x_j,y2})`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBlock {
    pub i: usize,
    pub j: usize,
    pub card_i: usize,
    pub card_j: usize,
    pub values: Vec<f64>,
}

impl PairBlock {
    pub fn zeros(i: usize, j: usize, card_i: usize, card_j: usize) -> Self {
        Self { i, j, card_i, card_j, values: vec![0.0; card_i * card_j] }
    }

    pub fn get(&self, y: usize, y2: usize) -> f64 {
        self.values[y + self.card_i * y2]
    }

    pub fn set(&mut self, y: usize, y2: usize, v: f64) {
        self.values[y + self.card_i * y2] = v;
    }

    /// Spin-basis value `E[(δ₊−δ₋)(δ₊−δ₋)]`-type contraction for binary variables.
    pub fn spin(&self) -> f64 {
        self.get(1, 1) - self.get(1, 0) - self.get(0, 1) + self.get(0, 0)
    }

    pub fn transposed(&self) -> Self {
        let mut t = Self::zeros(self.j, self.i, self.card_j, self.card_i);
        for y in 0..self.card_i {
            for y2 in 0..self.card_j {
                t.set(y2, y, self.get(y, y2));
            }
        }
        t
    }
}

/// Exact statistics of a model.
#[derive(Debug, Clone)]
pub struct ExactStats {
    pub log_z: f64,
    pub cards: Vec<usize>,
    pub single_marginals: Vec<Vec<f64>>,
    /// Joint tables for the requested pairs, first variable fastest.
    pub pair_marginals: Vec<PairBlock>,
    /// Full covariance over `(i, y)` indices, row-major, offsets from [`ExactStats::offset`].
    pub covariance: Vec<f64>,
    pub map_state: Vec<usize>,
    offsets: Vec<usize>,
}

impl ExactStats {
    pub fn dim(&self) -> usize {
        self.offsets[self.cards.len()]
    }

    pub fn offset(&self, var: usize) -> usize {
        self.offsets[var]
    }

    pub fn cov(&self, i: usize, y: usize, j: usize, y2: usize) -> f64 {
        self.covariance[(self.offsets[i] + y) * self.dim() + self.offsets[j] + y2]
    }

    pub fn cov_block(&self, i: usize, j: usize) -> PairBlock {
        let mut b = PairBlock::zeros(i, j, self.cards[i], self.cards[j]);
        for y in 0..self.cards[i] {
            for y2 in 0..self.cards[j] {
                b.set(y, y2, self.cov(i, y, j, y2));
            }
        }
        b
    }

    /// Spin-basis expectation `E[x_i]` for a binary variable.
    pub fn magnetization(&self, i: usize) -> f64 {
        self.single_marginals[i][1] - self.single_marginals[i][0]
    }
}

/// Additive perturbation `ν` of the log-probability on `δ_{x_var, state}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub var: usize,
    pub state: usize,
    pub magnitude: f64,
}

impl PerturbationSpec {
    pub fn validate<R: Real>(&self, fg: &FactorGraph<R>) -> Result<(), OracleError> {
        let bad = |msg: &str| OracleError::Target { var: self.var, state: self.state, msg: msg.into() };
        if self.var >= fg.num_vars() {
            return Err(bad("variable out of range"));
        }
        if self.state >= fg.card(self.var) {
            return Err(bad("state out of range"));
        }
        if !self.magnitude.is_finite() {
            return Err(bad("magnitude not finite"));
        }
        Ok(())
    }
}

/// Copy of `fg` with each perturbation appended as a single-variable factor.
pub fn perturb<R: Real>(fg: &FactorGraph<R>, specs: &[PerturbationSpec]) -> Result<FactorGraph<R>, OracleError> {
    let mut factors = fg.factors().to_vec();
    for s in specs {
        s.validate(fg)?;
        let y = fg.card(s.var);
        let mut t = vec![R::one(); y];
        t[s.state] = R::lit(s.magnitude.exp());
        factors.push(FactorTable::new(vec![s.var], vec![y], t));
    }
    FactorGraph::new(fg.cards().to_vec(), factors).map_err(|e| OracleError::Shape(e.to_string()))
}

struct Enumerator {
    cards: Vec<usize>,
    log_tables: Vec<(Vec<usize>, Vec<usize>, Vec<f64>)>,
}

impl Enumerator {
    fn new<R: Real>(fg: &FactorGraph<R>, cap: f64) -> Result<Self, OracleError> {
        let states = fg.state_space();
        if states > cap {
            return Err(OracleError::StateSpace { states, cap });
        }
        let log_tables = fg
            .factors()
            .iter()
            .map(|f| {
                let mut strides = Vec::with_capacity(f.cards().len());
                let mut s = 1;
                for &c in f.cards() {
                    strides.push(s);
                    s *= c;
                }
                (f.members().to_vec(), strides, f.table().iter().map(|v| v.value().ln()).collect())
            })
            .collect();
        Ok(Self { cards: fg.cards().to_vec(), log_tables })
    }

    fn log_weight(&self, x: &[usize]) -> f64 {
        let mut s = 0.0;
        for (m, st, t) in &self.log_tables {
            let mut idx = 0;
            for (v, k) in m.iter().zip(st) {
                idx += x[*v] * k;
            }
            s += t[idx];
        }
        s
    }

    /// Visit every configuration, first variable fastest.
    fn for_each(&self, mut f: impl FnMut(&[usize], f64)) {
        let n = self.cards.len();
        let mut x = vec![0usize; n];
        loop {
            f(&x, self.log_weight(&x));
            let mut k = 0;
            loop {
                if k == n {
                    return;
                }
                x[k] += 1;
                if x[k] < self.cards[k] {
                    break;
                }
                x[k] = 0;
                k += 1;
            }
        }
    }

    fn log_z(&self) -> (f64, f64) {
        let mut max = f64::NEG_INFINITY;
        self.for_each(|_, w| max = max.max(w));
        if max == f64::NEG_INFINITY {
            return (max, max);
        }
        let mut s = 0.0;
        self.for_each(|_, w| s += (w - max).exp());
        (max + s.ln(), max)
    }
}

/// Exact statistics with the default enumeration cap.
pub fn exact_stats<R: Real>(fg: &FactorGraph<R>, pairs: &[(usize, usize)]) -> Result<ExactStats, OracleError> {
    exact_stats_capped(fg, pairs, DEFAULT_STATE_CAP)
}

/// Exact statistics by enumeration, refusing state spaces above `cap`.
pub fn exact_stats_capped<R: Real>(
    fg: &FactorGraph<R>,
    pairs: &[(usize, usize)],
    cap: f64,
) -> Result<ExactStats, OracleError> {
    let en = Enumerator::new(fg, cap)?;
    let n = fg.num_vars();
    let cards = fg.cards().to_vec();
    for &(i, j) in pairs {
        if i >= n || j >= n {
            return Err(OracleError::Shape(format!("pair ({i}, {j}) out of range")));
        }
    }
    let mut offsets = vec![0; n + 1];
    for i in 0..n {
        offsets[i + 1] = offsets[i] + cards[i];
    }
    let dim = offsets[n];
    let (log_z, _) = en.log_z();
    if !log_z.is_finite() {
        return Err(OracleError::Shape("model has zero total weight".into()));
    }
    // Second moments of indicators, accumulated over the upper triangle.
    let mut second = vec![0.0; dim * dim];
    let mut map_state = vec![0; n];
    let mut map_w = f64::NEG_INFINITY;
    let mut idx = vec![0usize; n];
    en.for_each(|x, w| {
        if w > map_w || (w == map_w && x.cmp(&map_state[..]).is_lt()) {
            map_w = w;
            map_state.copy_from_slice(x);
        }
        let p = (w - log_z).exp();
        if p == 0.0 {
            return;
        }
        for i in 0..n {
            idx[i] = offsets[i] + x[i];
        }
        for a in 0..n {
            let row = idx[a] * dim;
            for b in a..n {
                second[row + idx[b]] += p;
            }
        }
    });
    let single: Vec<Vec<f64>> = (0..n).map(|i| (0..cards[i]).map(|y| second[(offsets[i] + y) * (dim + 1)]).collect()).collect();
    let mut covariance = vec![0.0; dim * dim];
    for i in 0..n {
        for j in i..n {
            for y in 0..cards[i] {
                for y2 in 0..cards[j] {
                    let (r, c) = (offsets[i] + y, offsets[j] + y2);
                    let joint = if i == j { if y == y2 { single[i][y] } else { 0.0 } } else { second[r * dim + c] };
                    let v = joint - single[i][y] * single[j][y2];
                    covariance[r * dim + c] = v;
                    covariance[c * dim + r] = v;
                }
            }
        }
    }
    let pair_marginals = pairs
        .iter()
        .map(|&(i, j)| {
            let mut b = PairBlock::zeros(i, j, cards[i], cards[j]);
            for y in 0..cards[i] {
                for y2 in 0..cards[j] {
                    let v = if i == j {
                        if y == y2 { single[i][y] } else { 0.0 }
                    } else {
                        let (r, c) = (offsets[i] + y, offsets[j] + y2);
                        if i < j { second[r * dim + c] } else { second[c * dim + r] }
                    };
                    b.set(y, y2, v);
                }
            }
            b
        })
        .collect();
    Ok(ExactStats { log_z, cards, single_marginals: single, pair_marginals, covariance, map_state, offsets })
}

/// Exact single-variable marginals only.
pub fn exact_marginals<R: Real>(fg: &FactorGraph<R>) -> Result<Vec<Vec<f64>>, OracleError> {
    let en = Enumerator::new(fg, DEFAULT_STATE_CAP)?;
    let (log_z, _) = en.log_z();
    let mut out: Vec<Vec<f64>> = fg.cards().iter().map(|&c| vec![0.0; c]).collect();
    en.for_each(|x, w| {
        let p = (w - log_z).exp();
        for (o, &s) in out.iter_mut().zip(x) {
            o[s] += p;
        }
    });
    Ok(out)
}

/// Central finite-difference response row `∂E[δ_{x_j,y2}]/∂ν_{i,y}` for all `(j, y2)`.
pub fn exact_response_fd<R: Real>(
    fg: &FactorGraph<R>,
    spec: PerturbationSpec,
    eps: f64,
) -> Result<Vec<Vec<f64>>, OracleError> {
    if !(eps > 0.0) {
        return Err(OracleError::Shape(format!("finite-difference step must be positive, got {eps}")));
    }
    spec.validate(fg)?;
    let at = |m: f64| perturb(fg, &[PerturbationSpec { magnitude: spec.magnitude + m, ..spec }]).and_then(|g| exact_marginals(&g));
    let plus = at(eps)?;
    let minus = at(-eps)?;
    Ok(plus
        .iter()
        .zip(&minus)
        .map(|(p, m)| p.iter().zip(m).map(|(a, b)| (a - b) / (2.0 * eps)).collect())
        .collect())
}

/// Elementwise approximation errors against exact statistics.
#[derive(Debug, Clone)]
pub struct ErrorTables {
    /// Marginal errors `q_i(y) − p_i(y)`.
    pub marginal: Vec<Vec<f64>>,
    /// Marginal-covariance errors `C − V_p`.
    pub c: Vec<PairBlock>,
    /// Linear-response errors `χ − V_p`.
    pub chi: Vec<PairBlock>,
}

fn max_abs<'a>(it: impl Iterator<Item = &'a f64>) -> f64 {
    it.fold(0.0, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
}

impl ErrorTables {
    pub fn mad_marginal(&self) -> f64 {
        max_abs(self.marginal.iter().flatten())
    }

    pub fn mad_c(&self) -> f64 {
        max_abs(self.c.iter().flat_map(|b| b.values.iter()))
    }

    pub fn mad_chi(&self) -> f64 {
        max_abs(self.chi.iter().flat_map(|b| b.values.iter()))
    }
}

/// Errors of approximate marginals, marginal covariances and linear responses.
pub fn exact_errors(
    marginals: &[Vec<f64>],
    c: &[PairBlock],
    chi: &[PairBlock],
    stats: &ExactStats,
) -> Result<ErrorTables, OracleError> {
    if marginals.len() != stats.cards.len() {
        return Err(OracleError::Shape(format!("{} marginals for {} variables", marginals.len(), stats.cards.len())));
    }
    let mut marginal = Vec::with_capacity(marginals.len());
    for (i, (q, p)) in marginals.iter().zip(&stats.single_marginals).enumerate() {
        if q.len() != p.len() {
            return Err(OracleError::Shape(format!("variable {i}: {} states, expected {}", q.len(), p.len())));
        }
        marginal.push(q.iter().zip(p).map(|(a, b)| a - b).collect());
    }
    let diff = |blocks: &[PairBlock]| -> Result<Vec<PairBlock>, OracleError> {
        blocks
            .iter()
            .map(|b| {
                if b.i >= stats.cards.len() || b.j >= stats.cards.len() {
                    return Err(OracleError::Shape(format!("block ({}, {}) out of range", b.i, b.j)));
                }
                if b.card_i != stats.cards[b.i] || b.card_j != stats.cards[b.j] || b.values.len() != b.card_i * b.card_j {
                    return Err(OracleError::Shape(format!("block ({}, {}) has the wrong shape", b.i, b.j)));
                }
                let mut d = b.clone();
                for y in 0..b.card_i {
                    for y2 in 0..b.card_j {
                        d.set(y, y2, b.get(y, y2) - stats.cov(b.i, y, b.j, y2));
                    }
                }
                Ok(d)
            })
            .collect()
    };
    Ok(ErrorTables { marginal, c: diff(c)?, chi: diff(chi)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_model::IsingModel;

    fn model(fields: Vec<f64>, edges: Vec<(usize, usize, f64)>) -> FactorGraph<f64> {
        IsingModel::new(fields, edges).unwrap().to_factor_graph().unwrap()
    }

    #[test]
    fn single_spin_log_z() {
        let s = exact_stats(&model(vec![1.0], vec![]), &[]).unwrap();
        assert!((s.log_z - (2.0 * 1f64.cosh()).ln()).abs() < 1e-12);
    }

    #[test]
    fn two_spin_correlation() {
        let fg = model(vec![0.0, 0.0], vec![(0, 1, 1.0)]);
        let s = exact_stats(&fg, &[(0, 1)]).unwrap();
        assert!((s.cov_block(0, 1).spin() - 1f64.tanh()).abs() < 1e-12);
        let row = exact_response_fd(&fg, PerturbationSpec { var: 0, state: 1, magnitude: 0.0 }, 1e-4).unwrap();
        // Response of E[δ_{x_1,+}] to ν_{0,+} is the indicator covariance tanh(1)/4.
        assert!((row[1][1] - 1f64.tanh() / 4.0).abs() < 1e-6);
    }

    #[test]
    fn marginals_normalized_and_blocks_sum_to_zero() {
        let fg = model(vec![0.2, -0.4, 0.1], vec![(0, 1, 0.5), (1, 2, -0.8), (0, 2, 0.3)]);
        let s = exact_stats(&fg, &[(0, 1)]).unwrap();
        for m in &s.single_marginals {
            assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for r in 0..s.dim() {
            for j in 0..3 {
                let sum: f64 = (0..2).map(|y| s.covariance[r * s.dim() + s.offset(j) + y]).sum();
                assert!(sum.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_beliefs_error() {
        let s = exact_stats(&model(vec![1.0], vec![]), &[]).unwrap();
        let e = exact_errors(&[vec![0.5, 0.5]], &[], &[], &s).unwrap();
        let sigma = 1.0 / (1.0 + (-2f64).exp());
        assert!((e.marginal[0][1] - (0.5 - sigma)).abs() < 1e-12);
        assert!(exact_errors(&[vec![0.5, 0.5, 0.0]], &[], &[], &s).is_err());
    }

    #[test]
    fn map_state_tie_break_is_lexicographic() {
        let fg = model(vec![0.0, 0.0], vec![(0, 1, 1.0)]);
        let s = exact_stats(&fg, &[]).unwrap();
        assert_eq!(s.map_state, vec![0, 0]);
    }

    #[test]
    fn state_space_cap() {
        let fg = model(vec![0.0; 5], vec![(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 4, 1.0)]);
        assert!(matches!(exact_stats_capped(&fg, &[], 16.0), Err(OracleError::StateSpace { .. })));
    }
}
