use std::collections::BTreeSet;

use crate::error::InferenceError;
use crate::graph_model::factor_graph::decode_index;
use crate::graph_model::FactorGraph;
use crate::scalar::Real;

/// Outer region: a variable set and the model factors assigned to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OuterRegion {
    pub vars: Vec<usize>,
    pub factors: Vec<usize>,
}

/// Intersection region with its integer counting number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InnerRegion {
    pub vars: Vec<usize>,
    pub counting: i64,
}

/// Two-level region graph: outer regions, inner regions and containment edges
/// `(outer, inner)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionGraph {
    pub outer: Vec<OuterRegion>,
    pub inner: Vec<InnerRegion>,
    pub edges: Vec<(usize, usize)>,
}

impl RegionGraph {
    /// Bethe construction: one outer region per factor, one inner region per
    /// variable with counting number `1 - k_i`.
    pub fn bethe<R: Real>(fg: &FactorGraph<R>) -> Self {
        let outer: Vec<OuterRegion> = fg
            .factors()
            .iter()
            .enumerate()
            .map(|(fi, f)| OuterRegion { vars: f.members().to_vec(), factors: vec![fi] })
            .collect();
        let mut k = vec![0i64; fg.num_vars()];
        let mut edges = Vec::new();
        for (a, o) in outer.iter().enumerate() {
            for &v in &o.vars {
                k[v] += 1;
                edges.push((a, v));
            }
        }
        edges.sort_by_key(|&(a, v)| (v, a));
        let inner = k.iter().enumerate().map(|(v, &ki)| InnerRegion { vars: vec![v], counting: 1 - ki }).collect();
        Self { outer, inner, edges }
    }

    /// Number of outer regions containing each variable.
    pub fn var_degrees(&self, num_vars: usize) -> Vec<usize> {
        let mut k = vec![0; num_vars];
        for o in &self.outer {
            for &v in &o.vars {
                k[v] += 1;
            }
        }
        k
    }

    /// Every violated structural invariant, as human-readable lines.
    pub fn validate<R: Real>(&self, fg: &FactorGraph<R>) -> Vec<String> {
        let mut report = Vec::new();
        let n = fg.num_vars();
        let mut owner: Vec<Vec<usize>> = vec![Vec::new(); fg.num_factors()];
        for (a, o) in self.outer.iter().enumerate() {
            let set: BTreeSet<usize> = o.vars.iter().copied().collect();
            if set.len() != o.vars.len() {
                report.push(format!("outer region {a} lists a variable twice"));
            }
            if let Some(&v) = o.vars.iter().find(|&&v| v >= n) {
                report.push(format!("outer region {a} references unknown variable {v}"));
            }
            for &f in &o.factors {
                if f >= fg.num_factors() {
                    report.push(format!("outer region {a} references unknown factor {f}"));
                    continue;
                }
                owner[f].push(a);
                if !fg.factors()[f].members().iter().all(|m| set.contains(m)) {
                    report.push(format!("factor {f} is not contained in outer region {a}"));
                }
            }
        }
        for (f, owners) in owner.iter().enumerate() {
            match owners.len() {
                0 => report.push(format!("factor {f} is not assigned to any outer region")),
                1 => {}
                _ => report.push(format!("factor {f} is assigned to outer regions {owners:?}")),
            }
        }
        let mut covered = vec![false; n];
        for o in &self.outer {
            for &v in o.vars.iter().filter(|&&v| v < n) {
                covered[v] = true;
            }
        }
        for (v, c) in covered.iter().enumerate() {
            if !c {
                report.push(format!("variable {v} is not covered by any outer region"));
            }
        }
        let mut inner_deg = vec![0usize; self.inner.len()];
        for &(a, b) in &self.edges {
            if a >= self.outer.len() || b >= self.inner.len() {
                report.push(format!("edge ({a}, {b}) references a missing region"));
                continue;
            }
            inner_deg[b] += 1;
            let outer: BTreeSet<usize> = self.outer[a].vars.iter().copied().collect();
            if !self.inner[b].vars.iter().all(|v| outer.contains(v)) {
                report.push(format!("inner region {b} is not a subset of connected outer region {a}"));
            }
        }
        for (b, r) in self.inner.iter().enumerate() {
            if inner_deg[b] == 0 {
                report.push(format!("inner region {b} has no containing outer region"));
            }
            if r.vars.is_empty() {
                report.push(format!("inner region {b} is empty"));
            }
        }
        // Counting numbers must count every variable exactly once.
        let mut count = vec![0i64; n];
        for o in &self.outer {
            for &v in o.vars.iter().filter(|&&v| v < n) {
                count[v] += 1;
            }
        }
        for r in &self.inner {
            for &v in r.vars.iter().filter(|&&v| v < n) {
                count[v] += r.counting;
            }
        }
        for (v, c) in count.iter().enumerate() {
            if covered[v] && *c != 1 {
                report.push(format!("variable {v} is counted {c} times by the counting numbers"));
            }
        }
        report
    }

    /// Variables surviving the recursive removal of variables that share at
    /// most one outer region with another surviving variable.
    pub fn two_core(&self, num_vars: usize) -> BTreeSet<usize> {
        let mut alive = vec![true; num_vars];
        loop {
            let mut deg = vec![0usize; num_vars];
            for o in &self.outer {
                let live: Vec<usize> = o.vars.iter().copied().filter(|&v| alive[v]).collect();
                if live.len() >= 2 {
                    for v in live {
                        deg[v] += 1;
                    }
                }
            }
            let mut changed = false;
            for v in 0..num_vars {
                if alive[v] && deg[v] <= 1 {
                    alive[v] = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        (0..num_vars).filter(|&v| alive[v]).collect()
    }
}

/// 2-core of a factor graph under its Bethe region graph.
pub fn two_core<R: Real>(fg: &FactorGraph<R>) -> BTreeSet<usize> {
    RegionGraph::bethe(fg).two_core(fg.num_vars())
}

/// Flattened index structures for message passing over a region graph.
#[derive(Debug, Clone)]
pub struct RegionLayout {
    pub cards: Vec<usize>,
    pub outer: Vec<OuterLayout>,
    pub inner: Vec<InnerLayout>,
    pub edges: Vec<EdgeLayout>,
    /// Edge ids per outer region, ascending inner index.
    pub outer_edges: Vec<Vec<usize>>,
    /// Outer regions containing each variable, ascending.
    pub var_outer: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct OuterLayout {
    pub vars: Vec<usize>,
    pub cards: Vec<usize>,
    pub size: usize,
    /// `states[p][x]`: state of member `p` in joint configuration `x`.
    pub states: Vec<Vec<usize>>,
}

impl OuterLayout {
    pub fn position(&self, var: usize) -> Option<usize> {
        self.vars.iter().position(|&v| v == var)
    }
}

#[derive(Debug, Clone)]
pub struct InnerLayout {
    pub vars: Vec<usize>,
    pub cards: Vec<usize>,
    pub size: usize,
    pub counting: i64,
    /// Edge ids, ascending outer index.
    pub edges: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EdgeLayout {
    pub outer: usize,
    pub inner: usize,
    /// Outer configuration index to inner configuration index.
    pub proj: Vec<usize>,
}

impl RegionLayout {
    pub fn new(rg: &RegionGraph, cards: &[usize]) -> Result<Self, InferenceError> {
        let outer: Vec<OuterLayout> = rg
            .outer
            .iter()
            .map(|o| {
                let oc: Vec<usize> = o.vars.iter().map(|&v| cards[v]).collect();
                let size = oc.iter().product();
                let mut states = vec![vec![0; size]; o.vars.len()];
                let mut buf = vec![0; o.vars.len()];
                for x in 0..size {
                    decode_index(&oc, x, &mut buf);
                    for (p, s) in buf.iter().enumerate() {
                        states[p][x] = *s;
                    }
                }
                OuterLayout { vars: o.vars.clone(), cards: oc, size, states }
            })
            .collect();
        let mut inner: Vec<InnerLayout> = rg
            .inner
            .iter()
            .map(|r| {
                let ic: Vec<usize> = r.vars.iter().map(|&v| cards[v]).collect();
                InnerLayout { vars: r.vars.clone(), size: ic.iter().product(), cards: ic, counting: r.counting, edges: Vec::new() }
            })
            .collect();
        let mut edge_ids: Vec<usize> = (0..rg.edges.len()).collect();
        edge_ids.sort_by_key(|&e| (rg.edges[e].1, rg.edges[e].0));
        let mut edges = Vec::with_capacity(rg.edges.len());
        let mut outer_edges = vec![Vec::new(); outer.len()];
        for &e in &edge_ids {
            let (a, b) = rg.edges[e];
            let ol = &outer[a];
            let il = &inner[b];
            let pos: Vec<usize> = il
                .vars
                .iter()
                .map(|v| {
                    ol.position(*v).ok_or_else(|| {
                        InferenceError::RegionGraph(format!("inner region {b} not contained in outer region {a}"))
                    })
                })
                .collect::<Result<_, _>>()?;
            let proj = (0..ol.size)
                .map(|x| {
                    let mut idx = 0;
                    let mut stride = 1;
                    for (k, &p) in pos.iter().enumerate() {
                        idx += ol.states[p][x] * stride;
                        stride *= il.cards[k];
                    }
                    idx
                })
                .collect();
            let id = edges.len();
            edges.push(EdgeLayout { outer: a, inner: b, proj });
            inner[b].edges.push(id);
            outer_edges[a].push(id);
        }
        let mut var_outer = vec![Vec::new(); cards.len()];
        for (a, o) in outer.iter().enumerate() {
            for &v in &o.vars {
                var_outer[v].push(a);
            }
        }
        Ok(Self { cards: cards.to_vec(), outer, inner, edges, outer_edges, var_outer })
    }

    pub fn num_vars(&self) -> usize {
        self.cards.len()
    }

    /// `k_i`: number of outer regions containing `var`.
    pub fn degree(&self, var: usize) -> usize {
        self.var_outer[var].len()
    }

    /// First outer region (by index) containing every listed variable.
    pub fn covering_region(&self, vars: &[usize]) -> Option<usize> {
        self.var_outer[vars[0]]
            .iter()
            .copied()
            .find(|&a| vars.iter().all(|v| self.outer[a].vars.contains(v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_model::FactorTable;

    fn pair(i: usize, j: usize) -> FactorTable<f64> {
        FactorTable::new(vec![i, j], vec![2, 2], vec![1.0, 0.5, 0.5, 1.0])
    }

    fn single(i: usize) -> FactorTable<f64> {
        FactorTable::new(vec![i], vec![2], vec![1.0, 2.0])
    }

    #[test]
    fn chain_counting_numbers() {
        let fg = FactorGraph::new(vec![2; 3], vec![pair(0, 1), pair(1, 2)]).unwrap();
        let rg = RegionGraph::bethe(&fg);
        let c: Vec<i64> = rg.inner.iter().map(|r| r.counting).collect();
        assert_eq!(c, vec![0, -1, 0]);
        assert!(rg.validate(&fg).is_empty());
    }

    #[test]
    fn fully_connected_ten() {
        let mut fs = Vec::new();
        for i in 0..10 {
            for j in i + 1..10 {
                fs.push(pair(i, j));
            }
        }
        let fg = FactorGraph::new(vec![2; 10], fs).unwrap();
        let rg = RegionGraph::bethe(&fg);
        assert_eq!(rg.outer.len(), 45);
        assert_eq!(rg.inner.len(), 10);
        assert!(rg.inner.iter().all(|r| r.counting == -8));
    }

    #[test]
    fn single_factor_adds_to_degree() {
        let fg = FactorGraph::new(vec![2; 2], vec![pair(0, 1), single(0)]).unwrap();
        let rg = RegionGraph::bethe(&fg);
        assert_eq!(rg.inner[0].counting, -1);
        assert_eq!(rg.inner[1].counting, 0);
    }

    #[test]
    fn validation_reports_violations() {
        let fg = FactorGraph::new(vec![2; 3], vec![pair(0, 1), pair(1, 2)]).unwrap();
        let mut rg = RegionGraph::bethe(&fg);
        rg.outer[1].factors.push(0);
        let rep = rg.validate(&fg);
        assert!(rep.iter().any(|l| l.contains("factor 0 is assigned")), "{rep:?}");
        assert!(rep.iter().any(|l| l.contains("factor 0 is not contained")), "{rep:?}");

        let mut rg = RegionGraph::bethe(&fg);
        rg.edges.push((0, 2));
        let rep = rg.validate(&fg);
        assert!(rep.iter().any(|l| l.contains("inner region 2 is not a subset")), "{rep:?}");
    }

    #[test]
    fn two_core_cases() {
        let tree = FactorGraph::new(vec![2; 4], vec![pair(0, 1), pair(1, 2), pair(1, 3), single(0), single(3)]).unwrap();
        assert!(two_core(&tree).is_empty());
        let cycle = FactorGraph::new(vec![2; 4], vec![pair(0, 1), pair(1, 2), pair(2, 3), pair(3, 0)]).unwrap();
        assert_eq!(two_core(&cycle).into_iter().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        let pendant =
            FactorGraph::new(vec![2; 5], vec![pair(0, 1), pair(1, 2), pair(2, 3), pair(3, 0), pair(3, 4), single(4)])
                .unwrap();
        assert_eq!(two_core(&pendant).into_iter().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn layout_projections() {
        let fg = FactorGraph::new(vec![2, 3], vec![FactorTable::new(vec![0, 1], vec![2, 3], vec![1.0; 6])]).unwrap();
        let rg = RegionGraph::bethe(&fg);
        let lay = RegionLayout::new(&rg, fg.cards()).unwrap();
        assert_eq!(lay.edges[0].proj, vec![0, 1, 0, 1, 0, 1]);
        assert_eq!(lay.edges[1].proj, vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(lay.covering_region(&[1, 0]), Some(0));
    }
}
