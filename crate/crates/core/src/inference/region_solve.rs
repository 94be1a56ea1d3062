//! Self-consistent outer-region belief under constraint terms.
//!
//! For fixed incoming messages the belief is
//! `q(x) ∝ exp(base(x) − Σ_c λ_c [f1 f2 − f1 B_c − A_c f2](x))` with
//! `A_c = E_q f1_c`, `B_c = E_q f2_c`, a fixed point in the moments.

use super::{normalize, Term};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Result of one region solve.
#[derive(Debug, Clone)]
pub struct RegionSolve<R> {
    pub log_q: Vec<R>,
    pub moments: Vec<(R, R)>,
    pub converged: bool,
    pub iterations: usize,
    /// The Newton fallback was needed.
    pub used_newton: bool,
}

/// Tolerance and iteration cap of the plain fixed-point iteration.
#[derive(Debug, Clone, Copy)]
pub struct RegionSolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub newton_iter: usize,
}

impl Default for RegionSolveOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 500, newton_iter: 100 }
    }
}

fn log_belief<R: Real>(base: &[R], terms: &[&Term], lambda: &[R], m: &[(R, R)]) -> Option<Vec<R>> {
    let mut lq = base.to_vec();
    for ((t, &l), &(a, b)) in terms.iter().zip(lambda).zip(m) {
        if l.is_inert_zero() {
            continue;
        }
        for (x, v) in lq.iter_mut().enumerate() {
            let (f1, f2) = (R::lit(t.f1[x]), R::lit(t.f2[x]));
            *v -= l * (f1 * f2 - f1 * b - a * f2);
        }
    }
    normalize(&mut lq).then_some(lq)
}

fn moments<R: Real>(lq: &[R], terms: &[&Term]) -> Vec<(R, R)> {
    terms.iter().map(|t| super::moments_of(lq, t)).collect()
}

fn residual<R: Real>(m: &[(R, R)], next: &[(R, R)]) -> f64 {
    m.iter()
        .zip(next)
        .map(|(a, b)| (a.0 - b.0).abs().max((a.1 - b.1).abs()).value())
        .fold(0.0, |x, y| if y.is_nan() { f64::NAN } else { x.max(y) })
}

/// Newton step on `G(m) = moments(q(m)) − m`; `None` when the Jacobian is singular.
fn newton_step<R: Real>(lq: &[R], terms: &[&Term], lambda: &[R], m: &[(R, R)]) -> Option<Vec<(R, R)>> {
    let n = terms.len();
    let q: Vec<R> = lq.iter().map(|v| v.exp()).collect();
    // Statistic g_k and log-belief sensitivity h_l, both over x.
    let g = |k: usize, x: usize| if k % 2 == 0 { terms[k / 2].f1[x] } else { terms[k / 2].f2[x] };
    let h = |l: usize, x: usize| {
        let c = l / 2;
        lambda[c] * R::lit(if l % 2 == 0 { terms[c].f2[x] } else { terms[c].f1[x] })
    };
    let mean = |f: &dyn Fn(usize) -> R| q.iter().enumerate().map(|(x, &p)| p * f(x)).sum::<R>();
    let mut jac = Matrix::zeros(2 * n);
    let mut rhs = vec![R::zero(); 2 * n];
    let next = moments(lq, terms);
    for k in 0..2 * n {
        let gm = mean(&|x| R::lit(g(k, x)));
        for l in 0..2 * n {
            let hm = mean(&|x| h(l, x));
            let cov = mean(&|x| R::lit(g(k, x)) * h(l, x)) - gm * hm;
            jac[(k, l)] = cov - if k == l { R::one() } else { R::zero() };
        }
        let (cur, nx) = if k % 2 == 0 { (m[k / 2].0, next[k / 2].0) } else { (m[k / 2].1, next[k / 2].1) };
        rhs[k] = cur - nx;
    }
    let d = jac.solve(&rhs)?;
    Some(m.iter().enumerate().map(|(c, &(a, b))| (a + d[2 * c], b + d[2 * c + 1])).collect())
}

/// Solve the self-consistent belief of one outer region.
///
/// `base` is the log generalized factor times incoming messages; `init` seeds
/// the moments. At `λ = 0` this is a single normalization.
pub fn solve_region_belief<R: Real>(
    base: &[R],
    terms: &[&Term],
    lambda: &[R],
    init: &[(R, R)],
    opts: &RegionSolveOptions,
) -> RegionSolve<R> {
    let zero_lambda = lambda.iter().all(|l| l.is_inert_zero());
    if terms.is_empty() || zero_lambda {
        let mut lq = base.to_vec();
        let ok = normalize(&mut lq);
        let m = moments(&lq, terms);
        return RegionSolve { log_q: lq, moments: m, converged: ok, iterations: 0, used_newton: false };
    }
    let mut m = init.to_vec();
    let mut best: Option<(f64, Vec<(R, R)>)> = None;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let Some(lq) = log_belief(base, terms, lambda, &m) else { break };
        let next = moments(&lq, terms);
        let r = residual(&m, &next);
        if r.is_nan() {
            break;
        }
        if best.as_ref().is_none_or(|b| r < b.0) {
            best = Some((r, m.clone()));
        }
        m = next;
        if r <= opts.tol {
            converged = true;
            break;
        }
    }
    let mut used_newton = false;
    if !converged {
        used_newton = true;
        m = best.map(|b| b.1).unwrap_or_else(|| init.to_vec());
        for _ in 0..opts.newton_iter {
            iterations += 1;
            let Some(lq) = log_belief(base, terms, lambda, &m) else { break };
            let r0 = residual(&m, &moments(&lq, terms));
            if r0 <= opts.tol {
                converged = true;
                break;
            }
            let Some(target) = newton_step(&lq, terms, lambda, &m) else { break };
            let mut s = R::one();
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<(R, R)> =
                    m.iter().zip(&target).map(|(a, t)| (a.0 + s * (t.0 - a.0), a.1 + s * (t.1 - a.1))).collect();
                if let Some(lt) = log_belief(base, terms, lambda, &trial) {
                    let r = residual(&trial, &moments(&lt, terms));
                    if r < r0 {
                        m = trial;
                        accepted = true;
                        break;
                    }
                }
                s *= R::lit(0.5);
            }
            if !accepted {
                break;
            }
        }
    }
    // A final Newton step at the fixed point also carries exact tangents when
    // `R` is a dual number.
    if converged {
        if let Some(lq) = log_belief(base, terms, lambda, &m) {
            if let Some(polished) = newton_step(&lq, terms, lambda, &m) {
                if polished.iter().all(|p| p.0.is_finite() && p.1.is_finite()) {
                    m = polished;
                }
            }
        }
    }
    let log_q = log_belief(base, terms, lambda, &m).unwrap_or_else(|| base.to_vec());
    let fin = moments(&log_q, terms);
    RegionSolve { log_q, moments: fin, converged, iterations, used_newton }
}
