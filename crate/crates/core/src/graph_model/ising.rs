use crate::error::ModelError;
use crate::graph_model::{FactorGraph, FactorTable};
use crate::scalar::Real;

/// Pairwise binary model `p(x) ∝ exp(Σ J_ij x_i x_j + Σ h_i x_i)`, `x ∈ {-1, +1}`.
///
/// State 0 is spin −1 and state 1 is spin +1.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingModel {
    pub fields: Vec<f64>,
    pub edges: Vec<(usize, usize, f64)>,
}

impl IsingModel {
    pub fn new(fields: Vec<f64>, edges: Vec<(usize, usize, f64)>) -> Result<Self, ModelError> {
        let n = fields.len();
        for (k, &(i, j, c)) in edges.iter().enumerate() {
            if i >= n || j >= n {
                return Err(ModelError::UnknownVariable { factor: k, var: i.max(j), num_vars: n });
            }
            if i == j {
                return Err(ModelError::DuplicateMember { factor: k, var: i });
            }
            if !c.is_finite() {
                return Err(ModelError::Invalid(format!("edge {k}: coupling {c} is not finite")));
            }
        }
        if let Some(h) = fields.iter().find(|h| !h.is_finite()) {
            return Err(ModelError::Invalid(format!("field {h} is not finite")));
        }
        Ok(Self { fields, edges })
    }

    pub fn num_vars(&self) -> usize {
        self.fields.len()
    }

    /// Factor graph with one field factor per spin (first) then one factor per edge.
    pub fn to_factor_graph<R: Real>(&self) -> Result<FactorGraph<R>, ModelError> {
        let mut factors = Vec::with_capacity(self.fields.len() + self.edges.len());
        for (i, &h) in self.fields.iter().enumerate() {
            factors.push(FactorTable::new(vec![i], vec![2], vec![R::lit((-h).exp()), R::lit(h.exp())]));
        }
        for &(i, j, c) in &self.edges {
            let (p, m) = (R::lit(c.exp()), R::lit((-c).exp()));
            factors.push(FactorTable::new(vec![i, j], vec![2, 2], vec![p, m, m, p]));
        }
        FactorGraph::new(vec![2; self.fields.len()], factors)
    }

    /// Log unnormalized weight of a spin configuration.
    pub fn energy_weight(&self, spins: &[i8]) -> f64 {
        let mut s: f64 = self.fields.iter().zip(spins).map(|(h, &x)| h * f64::from(x)).sum();
        for &(i, j, c) in &self.edges {
            s += c * f64::from(spins[i]) * f64::from(spins[j]);
        }
        s
    }
}

/// Spin value of a binary state index.
pub fn spin(state: usize) -> f64 {
    if state == 0 {
        -1.0
    } else {
        1.0
    }
}
