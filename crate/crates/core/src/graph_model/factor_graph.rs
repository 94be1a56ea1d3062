use crate::error::ModelError;
use crate::scalar::Real;

/// Dense non-negative table over an ordered list of variables.
///
/// Entries are linearized with the first listed member varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTable<R> {
    members: Vec<usize>,
    cards: Vec<usize>,
    table: Vec<R>,
}

impl<R: Real> FactorTable<R> {
    /// Build a factor; validation against a variable set happens in [`FactorGraph::new`].
    pub fn new(members: Vec<usize>, cards: Vec<usize>, table: Vec<R>) -> Self {
        Self { members, cards, table }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn table(&self) -> &[R] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [R] {
        &mut self.table
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Value at a joint assignment given as states in member order.
    pub fn get(&self, states: &[usize]) -> R {
        self.table[linear_index(&self.cards, states)]
    }

    /// Convert the entry type.
    pub fn cast<S: Real>(&self) -> FactorTable<S> {
        FactorTable {
            members: self.members.clone(),
            cards: self.cards.clone(),
            table: self.table.iter().map(|v| S::lit(v.value())).collect(),
        }
    }
}

/// Linear index of a joint state, first coordinate fastest.
pub fn linear_index(cards: &[usize], states: &[usize]) -> usize {
    let mut idx = 0;
    let mut stride = 1;
    for (&c, &s) in cards.iter().zip(states) {
        idx += s * stride;
        stride *= c;
    }
    idx
}

/// Inverse of [`linear_index`].
pub fn decode_index(cards: &[usize], mut idx: usize, out: &mut [usize]) {
    for (o, &c) in out.iter_mut().zip(cards) {
        *o = idx % c;
        idx /= c;
    }
}

/// Discrete factor graph `p(x) ∝ ∏_a ψ_a(x_a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph<R> {
    cards: Vec<usize>,
    factors: Vec<FactorTable<R>>,
}

impl<R: Real> FactorGraph<R> {
    /// Validate and assemble a factor graph.
    pub fn new(cards: Vec<usize>, factors: Vec<FactorTable<R>>) -> Result<Self, ModelError> {
        for (var, &card) in cards.iter().enumerate() {
            if card < 2 {
                return Err(ModelError::Cardinality { var, card });
            }
        }
        let mut used = vec![false; cards.len()];
        for (fi, f) in factors.iter().enumerate() {
            if f.members.len() != f.cards.len() {
                return Err(ModelError::Invalid(format!(
                    "factor {fi}: {} members but {} cardinalities",
                    f.members.len(),
                    f.cards.len()
                )));
            }
            for (k, &v) in f.members.iter().enumerate() {
                if v >= cards.len() {
                    return Err(ModelError::UnknownVariable { factor: fi, var: v, num_vars: cards.len() });
                }
                if f.members[..k].contains(&v) {
                    return Err(ModelError::DuplicateMember { factor: fi, var: v });
                }
                if f.cards[k] != cards[v] {
                    return Err(ModelError::CardinalityConflict { var: v, card: f.cards[k], prev: cards[v] });
                }
                used[v] = true;
            }
            let expected: usize = f.cards.iter().product();
            if f.table.len() != expected {
                return Err(ModelError::TableSize { factor: fi, got: f.table.len(), expected });
            }
            for (index, &value) in f.table.iter().enumerate() {
                if !(value >= R::zero()) || !value.is_finite() {
                    return Err(ModelError::NegativeEntry { factor: fi, index, value: value.value() });
                }
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(ModelError::UnusedVariable(v));
        }
        Ok(Self { cards, factors })
    }

    pub fn num_vars(&self) -> usize {
        self.cards.len()
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn card(&self, var: usize) -> usize {
        self.cards[var]
    }

    pub fn factors(&self) -> &[FactorTable<R>] {
        &self.factors
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    /// Number of joint configurations as a float (may exceed `usize`).
    pub fn state_space(&self) -> f64 {
        self.cards.iter().map(|&c| c as f64).product()
    }

    /// Factors containing each variable.
    pub fn var_factors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_vars()];
        for (fi, f) in self.factors.iter().enumerate() {
            for &v in &f.members {
                out[v].push(fi);
            }
        }
        out
    }

    /// Unnormalized log weight of a full configuration.
    pub fn log_weight(&self, x: &[usize]) -> R {
        let mut s = R::zero();
        let mut buf = Vec::new();
        for f in &self.factors {
            buf.clear();
            buf.extend(f.members.iter().map(|&v| x[v]));
            s += f.get(&buf).ln();
        }
        s
    }

    /// `p_T(x) ∝ p(x)^{1/T}`: every entry raised to `1/T`, zeros preserved.
    pub fn scale_temperature(&self, t: R) -> Result<Self, ModelError> {
        if !(t > R::zero()) || !t.is_finite() {
            return Err(ModelError::Temperature(t.value()));
        }
        let inv = t.recip();
        let factors = self
            .factors
            .iter()
            .map(|f| FactorTable {
                members: f.members.clone(),
                cards: f.cards.clone(),
                table: f
                    .table
                    .iter()
                    .map(|&v| if v == R::zero() { v } else { (v.ln() * inv).exp() })
                    .collect(),
            })
            .collect();
        Ok(Self { cards: self.cards.clone(), factors })
    }

    /// Clamp zero entries to `eps`.
    pub fn floor_zeros(&mut self, eps: R) {
        for f in &mut self.factors {
            for v in &mut f.table {
                if *v < eps {
                    *v = eps;
                }
            }
        }
    }

    /// Copy with one factor removed (variables left uncovered are not re-checked).
    pub fn without_factor(&self, idx: usize) -> Self {
        let mut factors = self.factors.clone();
        factors.remove(idx);
        Self { cards: self.cards.clone(), factors }
    }

    /// Multiply a factor table by a positive constant.
    pub fn scale_factor(&mut self, idx: usize, c: R) {
        for v in &mut self.factors[idx].table {
            *v *= c;
        }
    }

    /// Convert the entry type.
    pub fn cast<S: Real>(&self) -> FactorGraph<S> {
        FactorGraph { cards: self.cards.clone(), factors: self.factors.iter().map(|f| f.cast()).collect() }
    }

    /// Variables whose single-variable support is degenerate: some state is
    /// excluded by a zero-filled slice of a factor.
    pub fn degenerate_support(&self) -> Vec<bool> {
        let mut bad = vec![false; self.num_vars()];
        let mut states = Vec::new();
        for f in &self.factors {
            for (pos, &v) in f.members.iter().enumerate() {
                let mut any = vec![false; f.cards[pos]];
                states.resize(f.members.len(), 0);
                for (idx, &val) in f.table.iter().enumerate() {
                    decode_index(&f.cards, idx, &mut states);
                    if val > R::zero() {
                        any[states[pos]] = true;
                    }
                }
                if any.iter().any(|a| !a) {
                    bad[v] = true;
                }
            }
        }
        bad
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ising_edge(j: f64) -> FactorGraph<f64> {
        let t = vec![j.exp(), (-j).exp(), (-j).exp(), j.exp()];
        FactorGraph::new(vec![2, 2], vec![FactorTable::new(vec![0, 1], vec![2, 2], t)]).unwrap()
    }

    #[test]
    fn temperature_one_is_identity() {
        let fg = ising_edge(1.3);
        let s = fg.scale_temperature(1.0).unwrap();
        for (a, b) in fg.factors()[0].table().iter().zip(s.factors()[0].table()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn halving_coupling_equals_doubling_temperature() {
        let a = ising_edge(2.0).scale_temperature(2.0).unwrap();
        let b = ising_edge(1.0);
        for (x, y) in a.factors()[0].table().iter().zip(b.factors()[0].table()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn infinite_temperature_flattens_tables() {
        let s = ising_edge(3.0).scale_temperature(1e6).unwrap();
        assert!(s.factors()[0].table().iter().all(|v| (v - 1.0).abs() < 1e-5));
    }

    #[test]
    fn rejects_bad_temperatures_and_shapes() {
        let fg = ising_edge(1.0);
        assert!(matches!(fg.scale_temperature(0.0), Err(ModelError::Temperature(_))));
        assert!(matches!(fg.scale_temperature(-1.0), Err(ModelError::Temperature(_))));
        let bad = FactorGraph::new(vec![2, 2], vec![FactorTable::new(vec![0, 1], vec![2, 2], vec![1.0; 3])]);
        assert_eq!(bad.unwrap_err(), ModelError::TableSize { factor: 0, got: 3, expected: 4 });
        let dup = FactorGraph::new(vec![2], vec![FactorTable::new(vec![0, 0], vec![2, 2], vec![1.0; 4])]);
        assert_eq!(dup.unwrap_err(), ModelError::DuplicateMember { factor: 0, var: 0 });
        let unused = FactorGraph::new(vec![2, 2], vec![FactorTable::new(vec![0], vec![2], vec![1.0; 2])]);
        assert_eq!(unused.unwrap_err(), ModelError::UnusedVariable(1));
    }

    #[test]
    fn zero_entries_survive_scaling_and_flag_support() {
        let fg = FactorGraph::new(
            vec![3],
            vec![FactorTable::new(vec![0], vec![3], vec![0.0, 1.0, 2.0])],
        )
        .unwrap();
        let s = fg.scale_temperature(0.5).unwrap();
        assert_eq!(s.factors()[0].table()[0], 0.0);
        assert_eq!(fg.degenerate_support(), vec![true]);
    }

    #[test]
    fn index_roundtrip_first_member_fastest() {
        let cards = [2, 3, 4];
        let mut out = [0; 3];
        for idx in 0..24 {
            decode_index(&cards, idx, &mut out);
            assert_eq!(linear_index(&cards, &out), idx);
        }
        assert_eq!(linear_index(&cards, &[1, 0, 0]), 1);
        assert_eq!(linear_index(&cards, &[0, 1, 0]), 2);
    }
}
