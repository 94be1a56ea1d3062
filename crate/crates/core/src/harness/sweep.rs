//! Temperature annealing with warm starts and per-temperature error metrics.

use std::time::Instant;

use crate::constraints::{solve_constrained_from, ConstrainedOptions, ConstrainedSolution, Regime, SolveStatus, WarmStart};
use crate::error::HarnessError;
use crate::graph_model::FactorGraph;
use crate::oracle::{exact_errors, exact_stats, ExactStats, PairBlock};
use crate::response::ClspOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

/// Strictly monotone temperature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealSchedule {
    temps: Vec<f64>,
    /// Retry a failed step once from the warm start with this initial damping.
    pub escalate_damping: Option<f64>,
}

impl AnnealSchedule {
    pub fn new(temps: Vec<f64>) -> Result<Self, HarnessError> {
        if temps.is_empty() {
            return Err(HarnessError::Schedule("empty grid".into()));
        }
        if let Some(t) = temps.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(HarnessError::Schedule(format!("temperature {t} is not positive")));
        }
        let up = temps.windows(2).all(|w| w[1] > w[0]);
        let down = temps.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(HarnessError::Schedule("grid is not strictly monotone".into()));
        }
        Ok(Self { temps, escalate_damping: Some(0.5) })
    }

    /// `steps` points geometrically spaced in `1/T` from `t_start` to `t_end`.
    pub fn geometric(t_start: f64, t_end: f64, steps: usize) -> Result<Self, HarnessError> {
        if steps == 0 {
            return Err(HarnessError::Schedule("need at least one step".into()));
        }
        if steps == 1 {
            return Self::new(vec![t_start]);
        }
        if t_start == t_end || !(t_start > 0.0 && t_end > 0.0) {
            return Err(HarnessError::Schedule(format!("bad endpoints {t_start}, {t_end}")));
        }
        let (a, b) = (t_start.ln(), t_end.ln());
        let temps = (0..steps)
            .map(|k| match k {
                0 => t_start,
                k if k == steps - 1 => t_end,
                k => (a + (b - a) * k as f64 / (steps - 1) as f64).exp(),
            })
            .collect();
        Self::new(temps)
    }

    pub fn temps(&self) -> &[f64] {
        &self.temps
    }

    pub fn direction(&self) -> Direction {
        if self.temps.len() > 1 && self.temps[1] > self.temps[0] {
            Direction::Up
        } else {
            Direction::Down
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OracleMode {
    #[default]
    Auto,
    On,
    Off,
}

/// Which variable pairs enter the covariance and response errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairSet {
    /// Pairs sharing a factor; `C` is only defined there.
    #[default]
    Edges,
    /// All distinct pairs for `χ`, edges for `C`.
    All,
}

/// Largest state space for which `OracleMode::Auto` enumerates.
pub const AUTO_ORACLE_LIMIT: f64 = (1u64 << 20) as f64;

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub constrained: ConstrainedOptions,
    pub oracle: OracleMode,
    pub pairs: PairSet,
    pub clsp: ClspOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub t: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub mad_marginal: f64,
    pub mad_c: f64,
    pub mad_chi: f64,
    pub max_abs_delta: f64,
    pub lambda_q1: f64,
    pub lambda_q2: f64,
    pub lambda_q3: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub wall_ms: f64,
    pub lambda: Vec<f64>,
    pub marginals: Vec<Vec<f64>>,
}

impl SweepRecord {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    if sorted[hi].is_infinite() {
        return sorted[hi];
    }
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn edge_pairs(fg: &FactorGraph<f64>) -> Vec<(usize, usize)> {
    let mut pairs = std::collections::BTreeSet::new();
    for f in fg.factors() {
        let m = f.members();
        for a in 0..m.len() {
            for b in a + 1..m.len() {
                pairs.insert((m[a].min(m[b]), m[a].max(m[b])));
            }
        }
    }
    pairs.into_iter().collect()
}

fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

struct Oracle {
    edges: Vec<(usize, usize)>,
    chi_pairs: Vec<(usize, usize)>,
}

impl Oracle {
    fn new(fg: &FactorGraph<f64>, opts: &SweepOptions) -> Option<Self> {
        let on = match opts.oracle {
            OracleMode::On => true,
            OracleMode::Off => false,
            OracleMode::Auto => fg.state_space() <= AUTO_ORACLE_LIMIT,
        };
        if !on {
            return None;
        }
        let edges = edge_pairs(fg);
        let chi_pairs = match opts.pairs {
            PairSet::Edges => edges.clone(),
            PairSet::All => all_pairs(fg.num_vars()),
        };
        Some(Self { edges, chi_pairs })
    }

    fn stats(&self, fg: &FactorGraph<f64>, t: f64) -> Result<ExactStats, HarnessError> {
        let mut pairs = self.chi_pairs.clone();
        for e in &self.edges {
            if !pairs.contains(e) {
                pairs.push(*e);
            }
        }
        Ok(exact_stats(&fg.scale_temperature(t)?, &pairs)?)
    }

    /// `(MAD Δ⁰, MAD Δ¹, MAD Δ²)` for a converged solution.
    fn errors(&self, sol: &ConstrainedSolution, stats: &ExactStats, clsp: &ClspOptions) -> Result<(f64, f64, f64), HarnessError> {
        let (chi, c) = sol.full_response(&self.edges, clsp)?;
        let chi_blocks: Vec<PairBlock> =
            self.chi_pairs.iter().filter_map(|&(i, j)| chi.block(i, j)).collect();
        let e = exact_errors(&sol.marginals(), &c.blocks, &chi_blocks, stats)?;
        Ok((e.mad_marginal(), e.mad_c(), e.mad_chi()))
    }
}

fn lambda_summary(lambda: &[f64]) -> [f64; 5] {
    if lambda.is_empty() {
        return [0.0; 5];
    }
    let mut s = lambda.to_vec();
    s.sort_by(f64::total_cmp);
    [quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75), s[0], s[s.len() - 1]]
}

/// One solve per temperature, warm-started from the previous step whenever
/// that step converged and cold-started otherwise.
pub fn anneal_sweep(
    fg: &FactorGraph<f64>,
    regime: Regime,
    schedule: &AnnealSchedule,
    opts: &SweepOptions,
) -> Result<Vec<SweepRecord>, HarnessError> {
    anneal_sweep_with(fg, regime, schedule, opts, |_, _| {})
}

/// [`anneal_sweep`] that also hands every step's record and solution to `visit`.
pub fn anneal_sweep_with<F: FnMut(&SweepRecord, &ConstrainedSolution)>(
    fg: &FactorGraph<f64>,
    regime: Regime,
    schedule: &AnnealSchedule,
    opts: &SweepOptions,
    mut visit: F,
) -> Result<Vec<SweepRecord>, HarnessError> {
    let oracle = Oracle::new(fg, opts);
    let mut warm: Option<WarmStart> = None;
    let mut out = Vec::with_capacity(schedule.temps().len());
    for &t in schedule.temps() {
        let start = Instant::now();
        let mut sol = solve_constrained_from(fg, regime, t, warm.as_ref(), &opts.constrained)?;
        if sol.status != SolveStatus::Converged {
            if let (Some(d), Some(w)) = (schedule.escalate_damping, warm.as_ref()) {
                let mut o = opts.constrained.clone();
                o.clbp.damping = o.clbp.damping.max(d);
                o.damping = o.damping.max(d);
                let retry = solve_constrained_from(fg, regime, t, Some(w), &o)?;
                if retry.status == SolveStatus::Converged {
                    sol = retry;
                }
            }
        }
        let converged = sol.status == SolveStatus::Converged;
        let (mut mad_marginal, mut mad_c, mut mad_chi) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        if let Some(o) = &oracle {
            if converged {
                let stats = o.stats(fg, t)?;
                (mad_marginal, mad_c, mad_chi) = o.errors(&sol, &stats, &opts.clsp)?;
            }
        } else {
            (mad_marginal, mad_c, mad_chi) = (f64::NAN, f64::NAN, f64::NAN);
        }
        let [q1, q2, q3, lo, hi] = lambda_summary(&sol.lambda.values);
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        out.push(SweepRecord {
            t,
            status: sol.status,
            iterations: sol.lambda.cycles,
            mad_marginal,
            mad_c,
            mad_chi,
            max_abs_delta: sol.max_abs_delta(),
            lambda_q1: q1,
            lambda_q2: q2,
            lambda_q3: q3,
            lambda_min: lo,
            lambda_max: hi,
            wall_ms,
            lambda: sol.lambda.values.clone(),
            marginals: sol.marginals(),
        });
        visit(out.last().unwrap(), &sol);
        warm = converged.then(|| sol.warm_start());
    }
    Ok(out)
}
