use super::region_solve::{solve_region_belief, RegionSolveOptions};
use super::{normalize, project, InferenceState, Problem, Term};
use crate::error::InferenceError;
use crate::scalar::{log_div, Real};

/// Options of the message-passing loop.
#[derive(Debug, Clone, Copy)]
pub struct ClbpOptions {
    /// Convergence threshold on the max log-message change per sweep.
    pub tol_msg: f64,
    pub max_iter: usize,
    /// Initial log-domain damping of downward messages.
    pub damping: f64,
    /// Raise damping by 0.1 (up to 0.9) when the residual stalls.
    pub adaptive_damping: bool,
    pub region: RegionSolveOptions,
}

impl Default for ClbpOptions {
    fn default() -> Self {
        Self { tol_msg: 1e-10, max_iter: 10_000, damping: 0.0, adaptive_damping: true, region: RegionSolveOptions::default() }
    }
}

/// Sweeps without a new best residual, at final damping, before giving up.
const STALL_SWEEPS: usize = 500;

/// Run message passing from uniform messages and beliefs.
pub fn clbp<R: Real>(p: &Problem<R>, lambda: &[R], opts: &ClbpOptions) -> Result<InferenceState<R>, InferenceError> {
    clbp_from(p, lambda, InferenceState::uniform(p), opts)
}

/// Outer-region log base: generalized factor times incoming downward messages.
pub(crate) fn region_base<R: Real>(p: &Problem<R>, down: &[Vec<R>], a: usize) -> Vec<R> {
    let mut base = p.log_psi[a].clone();
    for &e in &p.layout.outer_edges[a] {
        let el = &p.layout.edges[e];
        for (x, v) in base.iter_mut().enumerate() {
            *v += down[e][el.proj[x]];
        }
    }
    base
}

pub(crate) fn region_terms<'a, R: Real>(p: &'a Problem<R>, a: usize, lambda: &[R]) -> (Vec<&'a Term>, Vec<R>) {
    let ids = &p.region_terms[a];
    (ids.iter().map(|&c| &p.terms[c]).collect(), ids.iter().map(|&c| lambda[c]).collect())
}

fn max_change<R: Real>(old: &[R], new: &[R]) -> f64 {
    let mut m = 0.0f64;
    for (a, b) in old.iter().zip(new) {
        let (a, b) = (a.value(), b.value());
        if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
            continue;
        }
        let d = (a - b).abs();
        m = if d.is_nan() { f64::INFINITY } else { m.max(d) };
    }
    m
}

/// Re-solve one outer region with its current incoming messages.
pub(crate) fn update_region<R: Real>(
    p: &Problem<R>,
    lambda: &[R],
    st: &mut InferenceState<R>,
    a: usize,
    opts: &RegionSolveOptions,
) -> bool {
    let base = region_base(p, &st.down, a);
    let (terms, lam) = region_terms(p, a, lambda);
    let init: Vec<(R, R)> = p.region_terms[a].iter().map(|&c| st.moments[c]).collect();
    let r = solve_region_belief(&base, &terms, &lam, &init, opts);
    for (k, &c) in p.region_terms[a].iter().enumerate() {
        st.moments[c] = r.moments[k];
    }
    st.outer[a] = r.log_q;
    r.converged && !r.used_newton
}

/// Run message passing from a given state (warm start).
pub fn clbp_from<R: Real>(
    p: &Problem<R>,
    lambda: &[R],
    mut st: InferenceState<R>,
    opts: &ClbpOptions,
) -> Result<InferenceState<R>, InferenceError> {
    p.check_lambda(lambda)?;
    let lay = &p.layout;
    if st.moments.len() != p.terms.len() {
        st.moments = p.terms.iter().map(|t| super::moments_of(&st.outer[t.region], t)).collect();
    }
    st.converged = false;
    st.inner_failures = 0;
    let mut d = opts.damping;
    // Beliefs consistent with the starting messages.
    for a in 0..lay.outer.len() {
        if !update_region(p, lambda, &mut st, a, &opts.region) {
            st.inner_failures += 1;
        }
    }
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    for it in 1..=opts.max_iter {
        let mut change = 0.0f64;
        for (b, il) in lay.inner.iter().enumerate() {
            let mut lqb = vec![R::zero(); il.size];
            for &e in &il.edges {
                let el = &lay.edges[e];
                let marg = project(&st.outer[el.outer], &el.proj, il.size);
                let mut up: Vec<R> = marg.iter().zip(&st.down[e]).map(|(&m, &dn)| log_div(m, dn)).collect();
                if !normalize(&mut up) {
                    return Err(InferenceError::NonFinite { region: el.outer, iteration: it });
                }
                change = change.max(max_change(&st.up[e], &up));
                for (s, u) in lqb.iter_mut().zip(&up) {
                    *s += *u;
                }
                st.up[e] = up;
            }
            let kc = il.edges.len() as i64 + il.counting;
            let w = R::lit(1.0 / kc as f64);
            for v in lqb.iter_mut() {
                *v *= w;
            }
            if !normalize(&mut lqb) {
                return Err(InferenceError::NonFinite { region: lay.edges[il.edges[0]].outer, iteration: it });
            }
            for &e in &il.edges {
                let a = lay.edges[e].outer;
                let mut dn: Vec<R> = lqb.iter().zip(&st.up[e]).map(|(&q, &u)| log_div(q, u)).collect();
                if !normalize(&mut dn) {
                    return Err(InferenceError::NonFinite { region: a, iteration: it });
                }
                if d > 0.0 {
                    let dd = R::lit(d);
                    for (n, o) in dn.iter_mut().zip(&st.down[e]) {
                        if n.is_finite() && o.is_finite() {
                            *n = (R::one() - dd) * *n + dd * *o;
                        }
                    }
                    normalize(&mut dn);
                }
                change = change.max(max_change(&st.down[e], &dn));
                st.down[e] = dn;
                if !update_region(p, lambda, &mut st, a, &opts.region) {
                    st.inner_failures += 1;
                }
                if st.outer[a].iter().any(|v| v.is_nan()) {
                    return Err(InferenceError::NonFinite { region: a, iteration: it });
                }
            }
            st.inner[b] = lqb;
        }
        st.iterations += 1;
        st.residual = change;
        if change <= opts.tol_msg && st.consistency_residual(p) <= opts.tol_msg {
            st.converged = true;
            break;
        }
        if change < best {
            best = change;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if opts.adaptive_damping && since_best >= 50 && d < 0.9 - 1e-12 {
            d = (d + 0.1).min(0.9);
            since_best = 0;
            best = f64::INFINITY;
        }
        if since_best >= STALL_SWEEPS && (!opts.adaptive_damping || d >= 0.9 - 1e-12) {
            break;
        }
    }
    st.damping = d;
    Ok(st)
}
