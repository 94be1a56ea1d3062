//! Convergent double-loop minimization.
//!
//! Each outer step replaces the concave parts of the objective by their
//! tangent at the current beliefs `q'`, and bounds the convex quadratic part
//! of the multiplier terms by a KL proximal term. The resulting convex
//! problem `min Σ_α w_α Σ q_α log(q_α/ψ̃_α)` under consistency is solved exactly
//! by weighted iterative proportional fitting.

use super::{free_energy, moments_of, normalize, project, InferenceState, Problem};
use crate::error::InferenceError;
use crate::linalg::Matrix;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub struct DoubleLoopOptions {
    /// Stop when the max change of outer beliefs falls below this.
    pub tol: f64,
    pub max_outer: usize,
    /// Consistency tolerance of the inner convex solve.
    pub inner_tol: f64,
    pub inner_max: usize,
}

impl Default for DoubleLoopOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_outer: 5000, inner_tol: 1e-13, inner_max: 100_000 }
    }
}

#[derive(Debug, Clone)]
pub struct DoubleLoopResult<R> {
    pub state: InferenceState<R>,
    /// `F(q'_t)` for every outer iterate, starting with the initial beliefs.
    pub objective: Vec<f64>,
    /// `F(q'_{t+1}, q'_t)`, the bound minimized at step `t`.
    pub bound: Vec<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
}

/// Quadratic multiplier term of one region, `A0 + A1·q + qᵀ(A2⁺ + A2⁻)q`,
/// with `A2⁺` positive and `A2⁻` negative semidefinite.
#[derive(Debug, Clone)]
pub struct ConvexConcaveSplit<R> {
    pub a0: R,
    pub a1: Vec<R>,
    pub a2_plus: Matrix<R>,
    pub a2_minus: Matrix<R>,
    pub q_prime: Vec<R>,
}

impl<R: Real> ConvexConcaveSplit<R> {
    /// Split `Σ_c λ_c (E_q[f1 f2] − E_q[f1] E_q[f2]) + a0` over one region.
    pub fn new(f1: &[&[f64]], f2: &[&[f64]], lambda: &[R], a0: R, q_prime: Vec<R>) -> Self {
        let n = q_prime.len();
        let mut a1 = vec![R::zero(); n];
        let mut plus = Matrix::zeros(n);
        let mut minus = Matrix::zeros(n);
        for ((a, b), &l) in f1.iter().zip(f2).zip(lambda) {
            for x in 0..n {
                a1[x] += l * R::lit(a[x] * b[x]);
            }
            // −λ(abᵀ + baᵀ)/2 = −(λ/4)(a+b)(a+b)ᵀ + (λ/4)(a−b)(a−b)ᵀ
            let quarter = l * R::lit(0.25);
            for x in 0..n {
                for y in 0..n {
                    let s = R::lit((a[x] + b[x]) * (a[y] + b[y]));
                    let d = R::lit((a[x] - b[x]) * (a[y] - b[y]));
                    let (p, m) = if l >= R::zero() { (quarter * d, -quarter * s) } else { (-quarter * s, quarter * d) };
                    plus[(x, y)] += p;
                    minus[(x, y)] += m;
                }
            }
        }
        Self { a0, a1, a2_plus: plus, a2_minus: minus, q_prime }
    }

    /// Quadratic coefficient matrix `A2⁺ + A2⁻`.
    pub fn quadratic(&self) -> Matrix<R> {
        let n = self.a1.len();
        let mut m = Matrix::zeros(n);
        for x in 0..n {
            for y in 0..n {
                m[(x, y)] = self.a2_plus[(x, y)] + self.a2_minus[(x, y)];
            }
        }
        m
    }

    fn quad(m: &Matrix<R>, u: &[R], v: &[R]) -> R {
        let mv = m.mul_vec(v);
        u.iter().zip(&mv).map(|(a, b)| *a * *b).sum()
    }

    pub fn value(&self, q: &[R]) -> R {
        let a2 = self.quadratic();
        self.a0 + self.a1.iter().zip(q).map(|(a, b)| *a * *b).sum::<R>() + Self::quad(&a2, q, q)
    }

    /// Upper bound tight at `q'`: the concave part linearized, the convex part kept.
    pub fn majorizer(&self, q: &[R]) -> R {
        let a2 = self.quadratic();
        let qp = &self.q_prime;
        let d: Vec<R> = q.iter().zip(qp).map(|(a, b)| *a - *b).collect();
        self.a0
            + self.a1.iter().zip(q).map(|(a, b)| *a * *b).sum::<R>()
            + Self::quad(&a2, qp, qp)
            + R::lit(2.0) * Self::quad(&a2, qp, &d)
            + Self::quad(&self.a2_plus, &d, &d)
    }
}

fn range(v: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
    hi - lo
}

/// First-edge marginal of each inner region.
fn inner_from_outer<R: Real>(p: &Problem<R>, outer: &[Vec<R>]) -> Vec<Vec<R>> {
    p.layout
        .inner
        .iter()
        .map(|il| {
            let el = &p.layout.edges[il.edges[0]];
            let mut m = project(&outer[el.outer], &el.proj, il.size);
            normalize(&mut m);
            m
        })
        .collect()
}

fn state_from<R: Real>(p: &Problem<R>, outer: Vec<Vec<R>>) -> InferenceState<R> {
    let mut st = InferenceState::uniform(p);
    st.inner = inner_from_outer(p, &outer);
    st.moments = p.terms.iter().map(|t| moments_of(&outer[t.region], t)).collect();
    st.outer = outer;
    st
}

/// Weighted iterative proportional fitting; returns the final consistency residual.
fn fit<R: Real>(p: &Problem<R>, q: &mut [Vec<R>], w: &[f64], opts: &DoubleLoopOptions) -> f64 {
    let lay = &p.layout;
    let mut res = f64::INFINITY;
    for _ in 0..opts.inner_max {
        res = 0.0;
        for il in &lay.inner {
            if il.edges.len() < 2 {
                continue;
            }
            let margs: Vec<Vec<R>> =
                il.edges.iter().map(|&e| project(&q[lay.edges[e].outer], &lay.edges[e].proj, il.size)).collect();
            let wt: f64 = il.edges.iter().map(|&e| w[lay.edges[e].outer]).sum();
            let mut m = vec![R::zero(); il.size];
            for (k, &e) in il.edges.iter().enumerate() {
                let f = R::lit(w[lay.edges[e].outer] / wt);
                for (s, v) in m.iter_mut().zip(&margs[k]) {
                    *s = if *v == R::neg_infinity() || *s == R::neg_infinity() { R::neg_infinity() } else { *s + f * *v };
                }
            }
            normalize(&mut m);
            for (k, &e) in il.edges.iter().enumerate() {
                let el = &lay.edges[e];
                for (x, v) in q[el.outer].iter_mut().enumerate() {
                    let (mv, av) = (m[el.proj[x]], margs[k][el.proj[x]]);
                    if mv == R::neg_infinity() || av == R::neg_infinity() {
                        *v = R::neg_infinity();
                    } else {
                        *v += mv - av;
                    }
                }
                for (a, b) in margs[k].iter().zip(&m) {
                    if a.is_finite() || b.is_finite() {
                        res = res.max((a.exp() - b.exp()).abs().value());
                    }
                }
            }
        }
        if res <= opts.inner_tol {
            break;
        }
    }
    res
}

/// Double-loop minimization from uniform beliefs.
pub fn double_loop<R: Real>(
    p: &Problem<R>,
    lambda: &[R],
    opts: &DoubleLoopOptions,
) -> Result<DoubleLoopResult<R>, InferenceError> {
    let init: Vec<Vec<R>> = p.layout.outer.iter().map(|o| vec![-R::of_usize(o.size).ln(); o.size]).collect();
    double_loop_from(p, lambda, init, opts)
}

/// Double-loop minimization from consistent initial outer log beliefs.
pub fn double_loop_from<R: Real>(
    p: &Problem<R>,
    lambda: &[R],
    init: Vec<Vec<R>>,
    opts: &DoubleLoopOptions,
) -> Result<DoubleLoopResult<R>, InferenceError> {
    p.check_lambda(lambda)?;
    let lay = &p.layout;
    if let Some(b) = lay.inner.iter().position(|r| r.counting > 0) {
        return Err(InferenceError::Unsupported(format!(
            "inner region {b} has a positive counting number; the concave bound needs c ≤ 0"
        )));
    }
    // Proximal weights are fixed by λ and the statistic ranges.
    let mut kappa = vec![0.0; lay.outer.len()];
    for (c, t) in p.terms.iter().enumerate() {
        let l = lambda[c].value();
        let r = if l >= 0.0 {
            range(t.f1.iter().zip(&t.f2).map(|(a, b)| a - b))
        } else {
            range(t.f1.iter().zip(&t.f2).map(|(a, b)| a + b))
        };
        kappa[t.region] += l.abs() * r * r / 8.0;
    }
    let w: Vec<f64> = kappa.iter().map(|k| 1.0 + k).collect();
    let mut q = init;
    let mut objective = vec![free_energy(p, &state_from(p, q.clone()), lambda).value()];
    let mut bound = Vec::new();
    let mut converged = false;
    let mut outer_iterations = 0;
    for it in 1..=opts.max_outer {
        outer_iterations = it;
        let qb = inner_from_outer(p, &q);
        let mut tilde = Vec::with_capacity(lay.outer.len());
        let mut lambda_const = R::zero();
        for (a, ol) in lay.outer.iter().enumerate() {
            let mut lp = p.log_psi[a].clone();
            for &c in &p.region_terms[a] {
                let t = &p.terms[c];
                let (ma, mb) = moments_of(&q[a], t);
                lambda_const += lambda[c] * ma * mb;
                for (x, v) in lp.iter_mut().enumerate() {
                    let (f1, f2) = (R::lit(t.f1[x]), R::lit(t.f2[x]));
                    *v -= lambda[c] * (f1 * f2 - f1 * mb - ma * f2);
                }
            }
            for &e in &lay.outer_edges[a] {
                let el = &lay.edges[e];
                let il = &lay.inner[el.inner];
                if il.counting == 0 {
                    continue;
                }
                let f = R::lit(-(il.counting as f64) / il.edges.len() as f64);
                for (x, v) in lp.iter_mut().enumerate() {
                    let lq = qb[el.inner][el.proj[x]];
                    *v = if lq == R::neg_infinity() { R::neg_infinity() } else { *v + f * lq };
                }
            }
            let k = R::lit(kappa[a]);
            let mut t: Vec<R> = lp
                .iter()
                .zip(&q[a])
                .map(|(&l, &qp)| if kappa[a] > 0.0 { (l + k * qp) / R::lit(w[a]) } else { l })
                .collect();
            if !normalize(&mut t) {
                return Err(InferenceError::NonFinite { region: a, iteration: it });
            }
            let _ = ol;
            tilde.push((lp, t));
        }
        let mut next: Vec<Vec<R>> = tilde.iter().map(|(_, t)| t.clone()).collect();
        let res = fit(p, &mut next, &w, opts);
        if !res.is_finite() {
            return Err(InferenceError::NonFinite { region: 0, iteration: it });
        }
        for nq in next.iter_mut() {
            normalize(nq);
        }
        // Bound value at the new iterate.
        let mut b = lambda_const;
        for (a, (lp, _)) in tilde.iter().enumerate() {
            for (x, &v) in next[a].iter().enumerate() {
                if v > R::neg_infinity() {
                    let pv = v.exp();
                    b += pv * (v - lp[x]);
                    if kappa[a] > 0.0 {
                        b += R::lit(kappa[a]) * pv * (v - q[a][x]);
                    }
                }
            }
        }
        bound.push(b.value());
        let change = next
            .iter()
            .zip(&q)
            .flat_map(|(n, o)| n.iter().zip(o).map(|(a, b)| (a.exp() - b.exp()).abs().value()))
            .fold(0.0, f64::max);
        q = next;
        objective.push(free_energy(p, &state_from(p, q.clone()), lambda).value());
        if change <= opts.tol {
            converged = true;
            break;
        }
    }
    let mut state = state_from(p, q);
    state.converged = converged;
    state.iterations = outer_iterations;
    state.residual = state.consistency_residual(p);
    Ok(DoubleLoopResult { state, objective, bound, converged, outer_iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_model::{FactorGraph, IsingModel};
    use crate::inference::{clbp, ClbpOptions, Term};

    #[test]
    fn tree_matches_clbp() {
        let m = IsingModel::new(vec![0.3, -0.5, 0.2], vec![(0, 1, 1.2), (1, 2, -0.7)]).unwrap();
        let fg: FactorGraph<f64> = m.to_factor_graph().unwrap();
        let p = Problem::bethe(&fg).unwrap();
        let dl = double_loop(&p, &[], &DoubleLoopOptions::default()).unwrap();
        let bp = clbp(&p, &[], &ClbpOptions::default()).unwrap();
        for v in 0..3 {
            let (a, b) = (dl.state.var_marginal(&p, v), bp.var_marginal(&p, v));
            assert!((a[1] - b[1]).abs() < 1e-8);
        }
        for w in dl.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
    }

    #[test]
    fn split_reconstructs_quadratic() {
        let a = [0.3, -0.2, 0.5, 0.1];
        let b = [-0.4, 0.6, 0.2, -0.1];
        let s = ConvexConcaveSplit::new(&[&a, &a], &[&b, &a], &[0.7, -0.4], 0.0, vec![0.25; 4]);
        let q = s.quadratic();
        for x in 0..4 {
            for y in 0..4 {
                let want = -0.7 * (a[x] * b[y] + b[x] * a[y]) / 2.0 + 0.4 * a[x] * a[y];
                assert!((q[(x, y)] - want).abs() < 1e-12);
            }
        }
        let qv = [0.1, 0.2, 0.3, 0.4];
        assert!(s.majorizer(&qv) >= s.value(&qv) - 1e-12);
        assert!((s.majorizer(&[0.25; 4]) - s.value(&[0.25; 4])).abs() < 1e-12);
    }

    #[test]
    fn constrained_objective_descends() {
        let m = IsingModel::new(vec![0.2, -0.1, 0.1, 0.0], vec![(0, 1, 1.0), (1, 2, -1.0), (2, 3, 1.0), (3, 0, 1.0)])
            .unwrap();
        let fg: FactorGraph<f64> = m.to_factor_graph().unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // Diagonal term on the field region of spin 0 and an edge term on (0, 1).
        let terms = vec![
            Term { region: 0, f1: vec![-s, s], f2: vec![-s, s] },
            Term { region: 4, f1: vec![-s, s, -s, s], f2: vec![-s, -s, s, s] },
        ];
        let p = Problem::bethe(&fg).unwrap().with_terms(terms).unwrap();
        let r = double_loop(&p, &[-0.3, 0.4], &DoubleLoopOptions::default()).unwrap();
        for w in r.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "{} > {}", w[1], w[0]);
        }
        for (t, b) in r.bound.iter().enumerate() {
            assert!(*b <= r.objective[t] + 1e-10);
            assert!(r.objective[t + 1] <= *b + 1e-10);
        }
    }
}
