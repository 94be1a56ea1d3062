//! The outer cycle: beliefs at fixed λ, responses, then a multiplier update.

use std::collections::BTreeMap;

use super::cavity::{cavity_jacobian, newton_lambda_update, sherman_morrison_update};
use super::{
    assign_to_regions_with, build_constraints, AssignPolicy, build_terms, BasisKind, BuildOptions, ConstraintAssignment, ConstraintSpec,
    Regime, StatisticBasis,
};
use crate::error::{ConstraintError, InferenceError};
use crate::graph_model::{FactorGraph, RegionGraph};
use crate::inference::region_solve::RegionSolveOptions;
use crate::inference::{
    clbp_from, double_loop::double_loop_from, term_covariance, ClbpOptions, DoubleLoopOptions, InferenceState, Problem, Term,
};
use crate::response::{
    all_targets, clsp, clsp_target_from, marginal_covariance, region_rhs, source, ChiMatrix, ClspOptions, CMatrix,
    ResponseTarget, TargetResponse, ViolationVector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Converged,
    NoSolutionDetected,
    MaxIter,
    NumericFault,
}

impl SolveStatus {
    pub fn name(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::NoSolutionDetected => "no-solution",
            SolveStatus::MaxIter => "max-iter",
            SolveStatus::NumericFault => "numeric-fault",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Solver {
    #[default]
    Clbp,
    DoubleLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaUpdate {
    #[default]
    Cavity,
    ShermanMorrison,
}

#[derive(Debug, Clone, Copy)]
pub struct ConstrainedOptions {
    pub basis: BasisKind,
    pub build: BuildOptions,
    pub solver: Solver,
    pub update: LambdaUpdate,
    pub assign: AssignPolicy,
    pub clbp: ClbpOptions,
    pub double_loop: DoubleLoopOptions,
    pub clsp: ClspOptions,
    pub region: RegionSolveOptions,
    pub tol_constraint: f64,
    pub tol_lambda: f64,
    pub lambda_clip: f64,
    pub lambda_max_abs: f64,
    pub k_div: usize,
    /// Cycles with the violation inside tolerance but the multipliers still
    /// moving before giving up.
    pub stall_cycles: usize,
    /// Total belief-solver failures tolerated before giving up.
    pub max_belief_failures: usize,
    /// Initial multiplier damping `d` in `λ ← dλ + (1−d)λ*`.
    pub damping: f64,
    pub adaptive_damping: bool,
    pub max_cycles: usize,
}

impl Default for ConstrainedOptions {
    fn default() -> Self {
        Self {
            basis: BasisKind::Orthonormal,
            build: BuildOptions::default(),
            solver: Solver::Clbp,
            update: LambdaUpdate::Cavity,
            assign: AssignPolicy::default(),
            clbp: ClbpOptions::default(),
            double_loop: DoubleLoopOptions::default(),
            clsp: ClspOptions::default(),
            region: RegionSolveOptions::default(),
            tol_constraint: 1e-8,
            tol_lambda: 1e-9,
            lambda_clip: 1.0,
            lambda_max_abs: 1e3,
            k_div: 20,
            stall_cycles: 100,
            max_belief_failures: 12,
            damping: 0.0,
            adaptive_damping: true,
            max_cycles: 2000,
        }
    }
}

/// Multipliers and the damping reached when the loop stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSet {
    pub values: Vec<f64>,
    pub damping: f64,
    pub cycles: usize,
}

/// State carried between neighbouring temperatures.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub state: InferenceState<f64>,
    pub lambda: Vec<f64>,
    pub damping: f64,
}

#[derive(Debug, Clone)]
pub struct ConstrainedSolution {
    pub problem: Problem<f64>,
    pub spec: ConstraintSpec,
    pub assignment: ConstraintAssignment,
    pub state: InferenceState<f64>,
    pub lambda: LambdaSet,
    /// Per constraint `C_c` and `χ_c` from the assigned region.
    pub c_values: Vec<f64>,
    pub chi_values: Vec<f64>,
    pub violation: ViolationVector,
    pub status: SolveStatus,
    /// Cycles whose beliefs did not converge.
    pub belief_failures: usize,
    /// Region updates that used the gradient fallback.
    pub fallback_steps: usize,
    pub message: String,
}

impl ConstrainedSolution {
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        self.state.marginals(&self.problem)
    }

    pub fn max_abs_delta(&self) -> f64 {
        self.violation.max_abs()
    }

    pub fn warm_start(&self) -> WarmStart {
        WarmStart { state: self.state.clone(), lambda: self.lambda.values.clone(), damping: self.lambda.damping }
    }

    /// Full χ over every indicator target and `C` over the listed pairs.
    pub fn full_response(&self, pairs: &[(usize, usize)], opts: &ClspOptions) -> Result<(ChiMatrix, CMatrix), ConstraintError> {
        let cards = &self.problem.layout.cards;
        let targets = all_targets(cards, 0..cards.len());
        let (_, chi) = clsp(&self.problem, &self.state, &self.lambda.values, &targets, opts)?;
        let c = marginal_covariance(&self.problem, &self.state, pairs)?;
        Ok((chi, c))
    }
}

/// Solve the constrained problem at temperature `t` from `λ = 0`.
pub fn solve_constrained(
    fg: &FactorGraph<f64>,
    regime: Regime,
    t: f64,
    opts: &ConstrainedOptions,
) -> Result<ConstrainedSolution, ConstraintError> {
    solve_constrained_from(fg, regime, t, None, opts)
}

/// As [`solve_constrained`], warm-started from a neighbouring solution.
pub fn solve_constrained_from(
    fg: &FactorGraph<f64>,
    regime: Regime,
    t: f64,
    warm: Option<&WarmStart>,
    opts: &ConstrainedOptions,
) -> Result<ConstrainedSolution, ConstraintError> {
    let fgt = fg.scale_temperature(t)?;
    let rg = RegionGraph::bethe(&fgt);
    let basis = StatisticBasis::new(opts.basis, fgt.cards());
    let spec = build_constraints(&fgt, &rg, regime, &basis, &opts.build)?;
    let p = Problem::new(&fgt, rg)?;
    let assignment = assign_to_regions_with(&spec, &p.layout, opts.assign)?;
    let terms = build_terms(&spec, &assignment, &p.layout);
    let p = p.with_terms(terms)?;
    Ok(run(p, spec, assignment, warm, opts))
}

fn solve_beliefs(
    p: &Problem<f64>,
    lambda: &[f64],
    st: InferenceState<f64>,
    opts: &ConstrainedOptions,
) -> Result<InferenceState<f64>, InferenceError> {
    match opts.solver {
        Solver::Clbp => clbp_from(p, lambda, st, &opts.clbp),
        Solver::DoubleLoop => {
            let r = double_loop_from(p, lambda, st.outer, &opts.double_loop)?;
            let mut s = r.state;
            s.converged = r.converged;
            Ok(s)
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() || m.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Response targets: one per distinct `(variable, statistic)` on the left of a
/// constraint, plus the right-hand ones when the linearized update needs them.
struct Targets {
    list: Vec<ResponseTarget>,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl Targets {
    fn new(spec: &ConstraintSpec, both: bool) -> Self {
        let mut keys: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut list = Vec::new();
        let mut key = |var: usize, s: usize, phi: &[f64], list: &mut Vec<ResponseTarget>| {
            *keys.entry((var, s)).or_insert_with(|| {
                list.push(ResponseTarget { var, weights: phi.to_vec() });
                list.len() - 1
            })
        };
        let mut left = Vec::new();
        let mut right = Vec::new();
        for e in &spec.entries {
            left.push(key(e.i, e.s1, &e.phi_i, &mut list));
            if both {
                right.push(key(e.j, e.s2, &e.phi_j, &mut list));
            }
        }
        Self { list, left, right }
    }
}

/// Self-consistent region base recovered from the belief: removes the
/// multiplier terms evaluated at the belief's own moments.
fn effective_base(p: &Problem<f64>, st: &InferenceState<f64>, lambda: &[f64], a: usize) -> Vec<f64> {
    let mut base = st.outer[a].clone();
    for &c in &p.region_terms[a] {
        let t = &p.terms[c];
        let (ma, mb) = st.moments[c];
        for (x, v) in base.iter_mut().enumerate() {
            *v += lambda[c] * (t.f1[x] * t.f2[x] - t.f1[x] * mb - ma * t.f2[x]);
        }
    }
    base
}

fn run(
    p: Problem<f64>,
    spec: ConstraintSpec,
    assignment: ConstraintAssignment,
    warm: Option<&WarmStart>,
    opts: &ConstrainedOptions,
) -> ConstrainedSolution {
    let nc = spec.len();
    let compatible = |w: &&WarmStart| {
        w.state.outer.len() == p.layout.outer.len()
            && w.state.outer.iter().zip(&p.layout.outer).all(|(v, o)| v.len() == o.size)
    };
    let warm = warm.filter(compatible);
    let mut lambda = warm.filter(|w| w.lambda.len() == nc).map(|w| w.lambda.clone()).unwrap_or_else(|| vec![0.0; nc]);
    let mut st = match warm {
        Some(w) => {
            let mut s = w.state.clone();
            s.moments = Vec::new();
            s
        }
        None => InferenceState::uniform(&p),
    };
    let mut d = warm.map(|w| w.damping).unwrap_or(opts.damping);
    let targets = Targets::new(&spec, opts.update == LambdaUpdate::ShermanMorrison);
    let mut resp_down: Vec<Option<Vec<Vec<f64>>>> = vec![None; targets.list.len()];

    let mut status = SolveStatus::MaxIter;
    let mut message = String::new();
    let mut c_values = vec![f64::NAN; nc];
    let mut chi_values = vec![f64::NAN; nc];
    let mut prev_delta = f64::INFINITY;
    let mut best_delta = f64::INFINITY;
    let mut prev_lmax = max_abs(&lambda);
    let mut streak = 0usize;
    let mut drift = 0usize;
    let mut drift_start = (0.0f64, 0.0f64);
    let mut stall = 0usize;
    let mut belief_failures = 0usize;
    let mut consecutive_failures = 0usize;
    let mut fallback_steps = 0usize;
    let mut good: Option<(Vec<f64>, InferenceState<f64>)> = None;
    let mut cycles = 0;

    for cycle in 1..=opts.max_cycles {
        cycles = cycle;
        st = match solve_beliefs(&p, &lambda, st, opts) {
            Ok(s) => s,
            Err(e) => {
                status = SolveStatus::NumericFault;
                message = e.to_string();
                st = good.as_ref().map(|g| g.1.clone()).unwrap_or_else(|| InferenceState::uniform(&p));
                break;
            }
        };
        if nc == 0 {
            status = if st.converged { SolveStatus::Converged } else { SolveStatus::MaxIter };
            break;
        }
        if !st.converged {
            belief_failures += 1;
            consecutive_failures += 1;
            match &good {
                Some((lam, s)) if consecutive_failures <= 8 && belief_failures <= opts.max_belief_failures => {
                    // Retreat halfway toward the last multipliers with converged beliefs.
                    for (l, g) in lambda.iter_mut().zip(lam) {
                        *l = 0.5 * (*l + g);
                    }
                    st = s.clone();
                    if opts.adaptive_damping {
                        d = (d + 0.1).min(0.9);
                    }
                    continue;
                }
                _ => {
                    message = "belief solver did not converge".into();
                    break;
                }
            }
        }
        consecutive_failures = 0;
        good = Some((lambda.clone(), st.clone()));

        let mut responses: Vec<TargetResponse<f64>> = Vec::with_capacity(targets.list.len());
        let mut fault = None;
        for (k, t) in targets.list.iter().enumerate() {
            match clsp_target_from(&p, &st, &lambda, t, resp_down[k].as_deref(), &opts.clsp) {
                Ok(r) => {
                    resp_down[k] = Some(r.down.clone());
                    responses.push(r);
                }
                Err(e) => {
                    fault = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = fault {
            status = SolveStatus::NumericFault;
            message = e.to_string();
            break;
        }
        let mut delta = vec![0.0; nc];
        for c in 0..nc {
            let t = &p.terms[c];
            let a = t.region;
            c_values[c] = term_covariance(&st.outer[a], t);
            chi_values[c] = responses[targets.left[c]].contract(&st, a, &t.f2);
            delta[c] = c_values[c] - chi_values[c];
        }
        let max_delta = max_abs(&delta);
        if !max_delta.is_finite() {
            status = SolveStatus::NumericFault;
            message = "non-finite constraint violation".into();
            break;
        }
        let mut target = lambda.clone();
        match opts.update {
            LambdaUpdate::Cavity => {
                for (a, ids) in assignment.per_region.iter().enumerate() {
                    if ids.is_empty() {
                        continue;
                    }
                    let base = effective_base(&p, &st, &lambda, a);
                    let terms: Vec<&Term> = ids.iter().map(|&c| &p.terms[c]).collect();
                    let lam: Vec<f64> = ids.iter().map(|&c| lambda[c]).collect();
                    let init: Vec<(f64, f64)> = ids.iter().map(|&c| st.moments[c]).collect();
                    let rhs: Vec<Vec<f64>> = ids
                        .iter()
                        .map(|&c| {
                            let r = &responses[targets.left[c]];
                            region_rhs(&p, a, &source(&p, a, &r.target), &r.down)
                        })
                        .collect();
                    let (da, jac) = cavity_jacobian(&base, &terms, &lam, &init, &rhs, &opts.region);
                    let step = newton_lambda_update(&da, &jac, opts.lambda_clip);
                    if step.fallback {
                        fallback_steps += 1;
                    }
                    for (k, &c) in ids.iter().enumerate() {
                        target[c] = lambda[c] + step.step[k];
                    }
                }
            }
            LambdaUpdate::ShermanMorrison => {
                for c in 0..nc {
                    let e = &spec.entries[c];
                    let diag = |tk: usize, var: usize, phi: &[f64]| {
                        let a = p.layout.var_outer[var][0];
                        let ol = &p.layout.outer[a];
                        let pos = ol.position(var).unwrap();
                        let f: Vec<f64> = (0..ol.size).map(|x| phi[ol.states[pos][x]]).collect();
                        responses[tk].contract(&st, a, &f)
                    };
                    let chi_ii = diag(targets.left[c], e.i, &e.phi_i);
                    let chi_jj = diag(targets.right[c], e.j, &e.phi_j);
                    match sherman_morrison_update(chi_ii, chi_jj, chi_values[c], c_values[c], c) {
                        Ok(s) => target[c] = lambda[c] + s.clamp(-opts.lambda_clip, opts.lambda_clip),
                        Err(_) => fallback_steps += 1,
                    }
                }
            }
        }
        // Converged only if the undamped update would also leave λ in place.
        let proposed = lambda.iter().zip(&target).fold(0.0f64, |m, (l, t)| m.max((t - l).abs()));
        if max_delta <= opts.tol_constraint && proposed <= opts.tol_lambda {
            status = SolveStatus::Converged;
            break;
        }
        let lmax = max_abs(&lambda);
        if lmax > opts.lambda_max_abs {
            status = SolveStatus::NoSolutionDetected;
            message = format!("multiplier magnitude {lmax:e} exceeds {:e}", opts.lambda_max_abs);
            break;
        }
        let rising = lmax > prev_lmax;
        if rising && max_delta >= best_delta {
            streak += 1;
        } else {
            streak = 0;
        }
        best_delta = best_delta.min(max_delta);
        prev_lmax = lmax;
        if streak >= opts.k_div {
            status = SolveStatus::NoSolutionDetected;
            message = format!("multipliers grew for {} cycles without reducing the violation", opts.k_div);
            break;
        }
        // Runaway toward saturated beliefs: Δ shrinks but λ keeps growing at
        // a rate that does not decay.
        if rising {
            if drift == 0 {
                drift_start = (lmax, proposed);
            }
            drift += 1;
            if drift >= opts.k_div && proposed >= 0.25 * drift_start.1 && lmax - drift_start.0 >= 1.0 {
                status = SolveStatus::NoSolutionDetected;
                message = format!("multipliers drifted from {:e} to {lmax:e} without settling", drift_start.0);
                break;
            }
        } else {
            drift = 0;
        }
        if max_delta <= opts.tol_constraint {
            stall += 1;
            if stall >= opts.stall_cycles {
                message = format!("violation within tolerance for {stall} cycles but multipliers still moving by {proposed:e}");
                break;
            }
        } else {
            stall = 0;
        }
        if opts.adaptive_damping && max_delta > prev_delta {
            d = (d + 0.1).min(0.9);
        }
        prev_delta = max_delta;

        for (l, t) in lambda.iter_mut().zip(&target) {
            *l = d * *l + (1.0 - d) * t;
        }
    }
    if status != SolveStatus::Converged && message.is_empty() && status == SolveStatus::MaxIter {
        message = format!("stopped after {cycles} cycles");
    }
    let violation = ViolationVector {
        values: c_values.iter().zip(&chi_values).map(|(c, x)| c - x).collect(),
        regions: assignment.region.clone(),
    };
    ConstrainedSolution {
        problem: p,
        spec,
        assignment,
        state: st,
        lambda: LambdaSet { values: lambda, damping: d, cycles },
        c_values,
        chi_values,
        violation,
        status,
        belief_failures,
        fallback_steps,
        message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_model::IsingModel;
    use crate::oracle::exact_stats;

    fn square(j: f64, h: f64) -> FactorGraph<f64> {
        IsingModel::new(vec![h, -h, h * 0.5, 0.0], vec![(0, 1, j), (1, 2, j), (2, 3, j), (3, 0, j), (0, 2, -0.5 * j)])
            .unwrap()
            .to_factor_graph()
            .unwrap()
    }

    #[test]
    fn tree_converges_with_zero_lambda() {
        let fg: FactorGraph<f64> =
            IsingModel::new(vec![0.2, -0.1, 0.3], vec![(0, 1, 0.8), (1, 2, -0.6)]).unwrap().to_factor_graph().unwrap();
        let opts = ConstrainedOptions { build: BuildOptions { scope: super::super::Scope::All, ..Default::default() }, ..Default::default() };
        for r in [Regime::None, Regime::Diagonal, Regime::OnOff, Regime::OffDiagonal] {
            let s = solve_constrained(&fg, r, 1.0, &opts).unwrap();
            assert_eq!(s.status, SolveStatus::Converged, "{r}");
            assert!(s.lambda.values.iter().all(|l| *l == 0.0));
        }
    }

    #[test]
    fn none_regime_is_plain_clbp() {
        let fg = square(0.4, 0.2);
        let s = solve_constrained(&fg, Regime::None, 1.0, &ConstrainedOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Converged);
        assert_eq!(s.lambda.cycles, 1);
        assert!(s.lambda.values.is_empty());
    }

    #[test]
    fn constrained_loop_meets_tolerance() {
        let fg = square(0.4, 0.2);
        for r in [Regime::Diagonal, Regime::OnOff] {
            let s = solve_constrained(&fg, r, 1.0, &ConstrainedOptions::default()).unwrap();
            assert_eq!(s.status, SolveStatus::Converged, "{r}: {}", s.message);
            assert!(s.max_abs_delta() <= 1e-8);
        }
    }

    #[test]
    fn constraints_improve_marginals_on_a_small_loop() {
        let fg = square(0.5, 0.3);
        let ex = exact_stats(&fg, &[]).unwrap();
        let err = |r| {
            let s = solve_constrained(&fg, r, 1.0, &ConstrainedOptions::default()).unwrap();
            assert_eq!(s.status, SolveStatus::Converged, "{r}: {}", s.message);
            s.marginals().iter().zip(&ex.single_marginals).map(|(a, b)| (a[1] - b[1]).abs()).fold(0.0, f64::max)
        };
        let (none, onoff) = (err(Regime::None), err(Regime::OnOff));
        assert!(onoff <= none, "{onoff} > {none}");
    }

    #[test]
    fn sherman_morrison_update_also_converges() {
        let fg = square(0.3, 0.2);
        let opts = ConstrainedOptions { update: LambdaUpdate::ShermanMorrison, ..Default::default() };
        let s = solve_constrained(&fg, Regime::Diagonal, 2.0, &opts).unwrap();
        assert_eq!(s.status, SolveStatus::Converged, "{}", s.message);
    }
}
