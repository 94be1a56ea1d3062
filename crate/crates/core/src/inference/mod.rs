//! Belief optimization at fixed Lagrange multipliers.
//!
//! Beliefs and messages are stored in the log domain. A [`Problem`] bundles
//! the region layout, the log generalized factors and the constraint terms
//! attached to outer regions.

pub mod clbp;
pub mod double_loop;
pub mod ising;
pub mod region_solve;

pub use clbp::{clbp, clbp_from, ClbpOptions};
pub use double_loop::{double_loop, double_loop_from, ConvexConcaveSplit, DoubleLoopOptions, DoubleLoopResult};
pub use ising::{clbp_ising, EdgeState, IsingOptions};
pub use region_solve::{solve_region_belief, RegionSolve};

use crate::error::InferenceError;
use crate::graph_model::{FactorGraph, RegionGraph, RegionLayout};
use crate::scalar::{log_sum_exp, Real};

/// One constraint term `λ · V_{q_α}(f1, f2)` attached to an outer region.
/// `f1` and `f2` hold the statistic values over the region's joint states.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub region: usize,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
}

/// Region layout, log generalized factors and constraint terms.
#[derive(Debug, Clone)]
pub struct Problem<R> {
    pub rg: RegionGraph,
    pub layout: RegionLayout,
    pub log_psi: Vec<Vec<R>>,
    pub terms: Vec<Term>,
    /// Term ids per outer region.
    pub region_terms: Vec<Vec<usize>>,
}

impl<R: Real> Problem<R> {
    /// Problem over a Bethe region graph.
    pub fn bethe(fg: &FactorGraph<R>) -> Result<Self, InferenceError> {
        Self::new(fg, RegionGraph::bethe(fg))
    }

    pub fn new(fg: &FactorGraph<R>, rg: RegionGraph) -> Result<Self, InferenceError> {
        let report = rg.validate(fg);
        if !report.is_empty() {
            return Err(InferenceError::RegionGraph(report.join("; ")));
        }
        for (b, r) in rg.inner.iter().enumerate() {
            let k = rg.edges.iter().filter(|e| e.1 == b).count() as i64;
            if k + r.counting == 0 {
                return Err(InferenceError::DegenerateCounting { region: b });
            }
        }
        let layout = RegionLayout::new(&rg, fg.cards())?;
        let mut log_psi = Vec::with_capacity(rg.outer.len());
        for (a, o) in rg.outer.iter().enumerate() {
            let ol = &layout.outer[a];
            let mut lp = vec![R::zero(); ol.size];
            for &fi in &o.factors {
                let f = &fg.factors()[fi];
                let pos: Vec<usize> = f.members().iter().map(|v| ol.position(*v).unwrap()).collect();
                for (x, slot) in lp.iter_mut().enumerate() {
                    let mut idx = 0;
                    let mut stride = 1;
                    for (k, &p) in pos.iter().enumerate() {
                        idx += ol.states[p][x] * stride;
                        stride *= f.cards()[k];
                    }
                    *slot += f.table()[idx].ln();
                }
            }
            log_psi.push(lp);
        }
        let region_terms = vec![Vec::new(); rg.outer.len()];
        Ok(Self { rg, layout, log_psi, terms: Vec::new(), region_terms })
    }

    /// Replace the constraint terms.
    pub fn with_terms(mut self, terms: Vec<Term>) -> Result<Self, InferenceError> {
        self.region_terms = vec![Vec::new(); self.layout.outer.len()];
        for (id, t) in terms.iter().enumerate() {
            let size = self.layout.outer.get(t.region).map(|o| o.size).ok_or_else(|| {
                InferenceError::RegionGraph(format!("term {id} references missing region {}", t.region))
            })?;
            if t.f1.len() != size || t.f2.len() != size {
                return Err(InferenceError::RegionGraph(format!("term {id} does not match region {} size", t.region)));
            }
            self.region_terms[t.region].push(id);
        }
        self.terms = terms;
        Ok(self)
    }

    /// Add `ν δ_{x_var, state}` to the model, split as `ν/k_i` over the outer
    /// regions containing `var`.
    pub fn perturbed(&self, var: usize, state: usize, nu: R) -> Self {
        let mut p = self.clone();
        let regions = &self.layout.var_outer[var];
        let share = nu / R::of_usize(regions.len());
        for &a in regions {
            let ol = &self.layout.outer[a];
            let pos = ol.position(var).unwrap();
            for x in 0..ol.size {
                if ol.states[pos][x] == state {
                    p.log_psi[a][x] += share;
                }
            }
        }
        p
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn check_lambda(&self, lambda: &[R]) -> Result<(), InferenceError> {
        if lambda.len() != self.terms.len() {
            return Err(InferenceError::LambdaLength { got: lambda.len(), expected: self.terms.len() });
        }
        if lambda.iter().any(|l| !l.is_finite()) {
            return Err(InferenceError::Unsupported("non-finite Lagrange multiplier".into()));
        }
        Ok(())
    }

    /// Convert the scalar type.
    pub fn cast<S: Real>(&self) -> Problem<S> {
        Problem {
            rg: self.rg.clone(),
            layout: self.layout.clone(),
            log_psi: self.log_psi.iter().map(|v| v.iter().map(|x| S::lit(x.value())).collect()).collect(),
            terms: self.terms.clone(),
            region_terms: self.region_terms.clone(),
        }
    }
}

/// Beliefs, messages and per-region moment caches of one inference run.
#[derive(Debug, Clone)]
pub struct InferenceState<R> {
    /// `log q_α`, normalized.
    pub outer: Vec<Vec<R>>,
    /// `log q_β`, normalized.
    pub inner: Vec<Vec<R>>,
    /// `log μ_{α→β}` per containment edge.
    pub up: Vec<Vec<R>>,
    /// `log μ_{β→α}` per containment edge.
    pub down: Vec<Vec<R>>,
    /// Self-consistent statistic means `(E f1, E f2)` per term.
    pub moments: Vec<(R, R)>,
    pub converged: bool,
    pub iterations: usize,
    /// Final max log-message change.
    pub residual: f64,
    /// Region solves that needed the Newton fallback or failed outright.
    pub inner_failures: usize,
    pub damping: f64,
}

impl<R: Real> InferenceState<R> {
    /// Uniform messages and beliefs.
    pub fn uniform(p: &Problem<R>) -> Self {
        let lay = &p.layout;
        let flat = |n: usize| vec![-R::of_usize(n).ln(); n];
        let mut s = Self {
            outer: lay.outer.iter().map(|o| flat(o.size)).collect(),
            inner: lay.inner.iter().map(|r| flat(r.size)).collect(),
            up: lay.edges.iter().map(|e| flat(lay.inner[e.inner].size)).collect(),
            down: lay.edges.iter().map(|e| flat(lay.inner[e.inner].size)).collect(),
            moments: Vec::new(),
            converged: false,
            iterations: 0,
            residual: f64::INFINITY,
            inner_failures: 0,
            damping: 0.0,
        };
        s.moments = p.terms.iter().map(|t| moments_of(&s.outer[t.region], t)).collect();
        s
    }

    /// Probabilities of an outer region.
    pub fn outer_belief(&self, a: usize) -> Vec<R> {
        self.outer[a].iter().map(|v| v.exp()).collect()
    }

    /// Single-variable marginal: from an inner region equal to `{var}` when one
    /// exists, otherwise from the first outer region containing `var`.
    pub fn var_marginal(&self, p: &Problem<R>, var: usize) -> Vec<R> {
        let lay = &p.layout;
        if let Some(b) = lay.inner.iter().position(|r| r.vars == [var]) {
            return self.inner[b].iter().map(|v| v.exp()).collect();
        }
        let a = lay.var_outer[var][0];
        let ol = &lay.outer[a];
        let pos = ol.position(var).unwrap();
        let mut m = vec![R::zero(); lay.cards[var]];
        for x in 0..ol.size {
            m[ol.states[pos][x]] += self.outer[a][x].exp();
        }
        m
    }

    pub fn marginals(&self, p: &Problem<R>) -> Vec<Vec<R>> {
        (0..p.layout.num_vars()).map(|v| self.var_marginal(p, v)).collect()
    }

    /// Max over edges of `|Σ_{x_α∖x_β} q_α − q_β|`.
    pub fn consistency_residual(&self, p: &Problem<R>) -> f64 {
        let mut worst = 0.0f64;
        for (e, el) in p.layout.edges.iter().enumerate() {
            let _ = e;
            let m = project(&self.outer[el.outer], &el.proj, p.layout.inner[el.inner].size);
            for (a, b) in m.iter().zip(&self.inner[el.inner]) {
                worst = worst.max((a.exp() - b.exp()).abs().value());
            }
        }
        worst
    }
}

/// `log Σ_{x_α → x_β} exp(v)` over a projection map.
pub(crate) fn project<R: Real>(log_q: &[R], proj: &[usize], size: usize) -> Vec<R> {
    let mut max = vec![R::neg_infinity(); size];
    for (x, &v) in log_q.iter().enumerate() {
        if v > max[proj[x]] {
            max[proj[x]] = v;
        }
    }
    let mut acc = vec![R::zero(); size];
    for (x, &v) in log_q.iter().enumerate() {
        let m = max[proj[x]];
        if m != R::neg_infinity() {
            acc[proj[x]] += (v - m).exp();
        }
    }
    acc.iter().zip(&max).map(|(s, m)| if *m == R::neg_infinity() { *m } else { *m + s.ln() }).collect()
}

pub(crate) fn moments_of<R: Real>(log_q: &[R], t: &Term) -> (R, R) {
    let mut a = R::zero();
    let mut b = R::zero();
    for (x, lq) in log_q.iter().enumerate() {
        let q = lq.exp();
        a += q * R::lit(t.f1[x]);
        b += q * R::lit(t.f2[x]);
    }
    (a, b)
}

/// Marginal covariance `V_q(f1, f2)` of a term under its region belief.
pub fn term_covariance<R: Real>(log_q: &[R], t: &Term) -> R {
    let (a, b) = moments_of(log_q, t);
    let mut ab = R::zero();
    for (x, lq) in log_q.iter().enumerate() {
        ab += lq.exp() * R::lit(t.f1[x] * t.f2[x]);
    }
    ab - a * b
}

fn entropy_term<R: Real>(log_q: &[R]) -> R {
    log_q.iter().filter(|v| **v > R::neg_infinity()).map(|&v| v.exp() * v).sum()
}

/// Region free energy plus the multiplier-weighted marginal covariances,
/// `Σ_α Σ q_α log(q_α/ψ_α) + Σ_β c_β Σ q_β log q_β + Σ_c λ_c V_{q_α}(f1_c, f2_c)`.
/// The `−λ·χ` part of the Lagrangian is constant at fixed responses and omitted.
pub fn free_energy<R: Real>(p: &Problem<R>, state: &InferenceState<R>, lambda: &[R]) -> R {
    let mut f = R::zero();
    for (a, lq) in state.outer.iter().enumerate() {
        for (x, &v) in lq.iter().enumerate() {
            if v > R::neg_infinity() {
                f += v.exp() * (v - p.log_psi[a][x]);
            }
        }
    }
    for (b, lq) in state.inner.iter().enumerate() {
        let c = p.layout.inner[b].counting;
        if c != 0 {
            f += R::lit(c as f64) * entropy_term(lq);
        }
    }
    for (c, t) in p.terms.iter().enumerate() {
        f += lambda[c] * term_covariance(&state.outer[t.region], t);
    }
    f
}

/// Normalize a log table in place; returns `false` if it has no finite entry.
pub(crate) fn normalize<R: Real>(v: &mut [R]) -> bool {
    let z = log_sum_exp(v);
    if !z.is_finite() {
        return false;
    }
    for x in v.iter_mut() {
        *x -= z;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_model::IsingModel;

    #[test]
    fn single_spin_free_energy_is_minus_log_z() {
        let fg: FactorGraph<f64> = IsingModel::new(vec![0.7], vec![]).unwrap().to_factor_graph().unwrap();
        let p = Problem::bethe(&fg).unwrap();
        let st = clbp(&p, &[], &ClbpOptions::default()).unwrap();
        let exact = crate::oracle::exact_stats(&fg, &[]).unwrap();
        assert!((free_energy(&p, &st, &[]) + exact.log_z).abs() < 1e-10);
    }

    #[test]
    fn perturbation_is_split_over_regions() {
        let fg: FactorGraph<f64> =
            IsingModel::new(vec![0.0, 0.0], vec![(0, 1, 0.5)]).unwrap().to_factor_graph().unwrap();
        let p = Problem::bethe(&fg).unwrap();
        let q = p.perturbed(0, 1, 1.0);
        let total: f64 = (0..p.log_psi.len())
            .map(|a| {
                let d: Vec<f64> = q.log_psi[a].iter().zip(&p.log_psi[a]).map(|(x, y)| x - y).collect();
                d.iter().cloned().fold(0.0, f64::max)
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-15);
    }
}
