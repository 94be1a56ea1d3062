//! Constraint sets and the outer multiplier loop.

mod basis;
mod cavity;
mod solve;

pub use basis::{helmert, BasisKind, StatisticBasis};
pub use cavity::{cavity_jacobian, cavity_violation, newton_lambda_update, sherman_morrison_update, LambdaStep};
pub use solve::{
    solve_constrained, solve_constrained_from, ConstrainedOptions, ConstrainedSolution, LambdaSet, LambdaUpdate,
    SolveStatus, Solver, WarmStart,
};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::ConstraintError;
use crate::graph_model::{FactorGraph, RegionGraph, RegionLayout};
use crate::inference::Term;
use crate::response::StatisticPair;
use crate::scalar::Real;

/// Which statistic pairs are constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    None,
    Diagonal,
    OffDiagonal,
    OnOff,
    BlockDiagonal,
    PureDiagonal,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::None => "none",
            Regime::Diagonal => "diag",
            Regime::OffDiagonal => "offdiag",
            Regime::OnOff => "onoff",
            Regime::BlockDiagonal => "blockdiag",
            Regime::PureDiagonal => "purediag",
        }
    }

    fn has_diagonal(self) -> bool {
        matches!(self, Regime::Diagonal | Regime::OnOff | Regime::BlockDiagonal | Regime::PureDiagonal)
    }

    fn has_off_diagonal(self) -> bool {
        matches!(self, Regime::OffDiagonal | Regime::OnOff)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "none" => Regime::None,
            "diag" | "diagonal" => Regime::Diagonal,
            "offdiag" | "off-diagonal" => Regime::OffDiagonal,
            "onoff" | "on-and-off" => Regime::OnOff,
            "blockdiag" | "block-diagonal" => Regime::BlockDiagonal,
            "purediag" | "pure-diagonal" => Regime::PureDiagonal,
            _ => return Err(format!("unknown regime '{s}'")),
        })
    }
}

/// Variables eligible for constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scope {
    #[default]
    TwoCore,
    All,
}

/// Same-variable pairs per variable with more than two states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiagCount {
    /// Upper triangle of the basis block, `Y(Y−1)/2` pairs.
    #[default]
    Symmetric,
    /// Every ordered basis pair, `(Y−1)²` pairs.
    Ordered,
}

/// Approximation the constraints are attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Approximation {
    #[default]
    Bethe,
    MeanField,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BuildOptions {
    pub scope: Scope,
    pub diag_count: DiagCount,
    pub approximation: Approximation,
}

/// One constrained pair `V(φ_{i,s1}(x_i), φ_{j,s2}(x_j))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintEntry {
    pub i: usize,
    pub s1: usize,
    pub j: usize,
    pub s2: usize,
    pub phi_i: Vec<f64>,
    pub phi_j: Vec<f64>,
}

impl ConstraintEntry {
    pub fn is_diagonal(&self) -> bool {
        self.i == self.j
    }

    pub fn statistic_pair(&self) -> StatisticPair {
        StatisticPair { i: self.i, phi_i: self.phi_i.clone(), j: self.j, phi_j: self.phi_j.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub regime: Regime,
    pub scope: Vec<usize>,
    pub entries: Vec<ConstraintEntry>,
}

impl ConstraintSpec {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_diagonal(&self) -> usize {
        self.entries.iter().filter(|e| e.is_diagonal()).count()
    }
}

/// Enumerate the constrained statistic pairs of a regime.
pub fn build_constraints<R: Real>(
    fg: &FactorGraph<R>,
    rg: &RegionGraph,
    regime: Regime,
    basis: &StatisticBasis,
    opts: &BuildOptions,
) -> Result<ConstraintSpec, ConstraintError> {
    if opts.approximation == Approximation::MeanField && regime.has_off_diagonal() {
        return Err(ConstraintError::RegimeMismatch { regime: regime.name().into(), approx: "mean field".into() });
    }
    let n = fg.num_vars();
    let scope: BTreeSet<usize> = match opts.scope {
        Scope::TwoCore => rg.two_core(n),
        Scope::All => (0..n).collect(),
    };
    let mut entries = Vec::new();
    if regime == Regime::None {
        return Ok(ConstraintSpec { regime, scope: scope.into_iter().collect(), entries });
    }
    let degenerate = fg.degenerate_support();
    if let Some(&v) = scope.iter().find(|&&v| degenerate[v]) {
        return Err(ConstraintError::DegenerateSupport(v));
    }
    if regime.has_diagonal() {
        for &i in &scope {
            let card = fg.card(i);
            if regime == Regime::PureDiagonal {
                let count = if card == 2 { 1 } else { card };
                for y in 0..count {
                    let mut d = vec![0.0; card];
                    d[y] = 1.0;
                    entries.push(ConstraintEntry { i, s1: y, j: i, s2: y, phi_i: d.clone(), phi_j: d });
                }
                continue;
            }
            let stats = basis.stats(i);
            let ordered = regime == Regime::Diagonal && opts.diag_count == DiagCount::Ordered;
            for s1 in 0..stats.len() {
                let start = if ordered { 0 } else { s1 };
                for s2 in start..stats.len() {
                    entries.push(ConstraintEntry {
                        i,
                        s1,
                        j: i,
                        s2,
                        phi_i: stats[s1].clone(),
                        phi_j: stats[s2].clone(),
                    });
                }
            }
        }
    }
    if regime.has_off_diagonal() {
        let mut pairs = BTreeSet::new();
        for o in &rg.outer {
            for (a, &i) in o.vars.iter().enumerate() {
                for &j in &o.vars[a + 1..] {
                    let (i, j) = if i < j { (i, j) } else { (j, i) };
                    if scope.contains(&i) && scope.contains(&j) {
                        pairs.insert((i, j));
                    }
                }
            }
        }
        for (i, j) in pairs {
            let (si, sj) = (basis.stats(i), basis.stats(j));
            for (s1, a) in si.iter().enumerate() {
                for (s2, b) in sj.iter().enumerate() {
                    entries.push(ConstraintEntry { i, s1, j, s2, phi_i: a.clone(), phi_j: b.clone() });
                }
            }
        }
    }
    Ok(ConstraintSpec { regime, scope: scope.into_iter().collect(), entries })
}

/// Region of every constraint and the constraints of every region.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintAssignment {
    pub region: Vec<usize>,
    pub per_region: Vec<Vec<usize>>,
}

/// Which covering region receives a constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssignPolicy {
    /// First covering region in index order.
    First,
    /// First covering region with at least two variables, else the first.
    #[default]
    FirstInteraction,
}

/// Put each constraint on the first outer region containing both variables.
pub fn assign_to_regions(spec: &ConstraintSpec, layout: &RegionLayout) -> Result<ConstraintAssignment, ConstraintError> {
    assign_to_regions_with(spec, layout, AssignPolicy::First)
}

pub fn assign_to_regions_with(
    spec: &ConstraintSpec,
    layout: &RegionLayout,
    policy: AssignPolicy,
) -> Result<ConstraintAssignment, ConstraintError> {
    let mut region = Vec::with_capacity(spec.len());
    let mut per_region = vec![Vec::new(); layout.outer.len()];
    for (c, e) in spec.entries.iter().enumerate() {
        let covers = |a: &usize| layout.outer[*a].position(e.i).is_some() && layout.outer[*a].position(e.j).is_some();
        let first = layout.covering_region(&[e.i, e.j]).ok_or(ConstraintError::Uncovered(e.i, e.j))?;
        let a = match policy {
            AssignPolicy::First => first,
            AssignPolicy::FirstInteraction => {
                (0..layout.outer.len()).filter(covers).find(|&a| layout.outer[a].vars.len() >= 2).unwrap_or(first)
            }
        };
        region.push(a);
        per_region[a].push(c);
    }
    Ok(ConstraintAssignment { region, per_region })
}

/// Constraint terms over the joint states of their regions.
pub fn build_terms(spec: &ConstraintSpec, assignment: &ConstraintAssignment, layout: &RegionLayout) -> Vec<Term> {
    spec.entries
        .iter()
        .zip(&assignment.region)
        .map(|(e, &a)| {
            let ol = &layout.outer[a];
            let (pi, pj) = (ol.position(e.i).unwrap(), ol.position(e.j).unwrap());
            Term {
                region: a,
                f1: (0..ol.size).map(|x| e.phi_i[ol.states[pi][x]]).collect(),
                f2: (0..ol.size).map(|x| e.phi_j[ol.states[pj][x]]).collect(),
            }
        })
        .collect()
}
