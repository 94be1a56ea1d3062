//! Per-region multiplier updates with the surroundings frozen.

use crate::error::ConstraintError;
use crate::inference::region_solve::{solve_region_belief, RegionSolveOptions};
use crate::inference::{term_covariance, Term};
use crate::linalg::Matrix;
use crate::response::RegionResponse;
use crate::scalar::{Dual, Real};

/// `Δ_α(λ_α)` with incoming messages (inside `base`) and response messages
/// (inside `rhs`, one per region term) held fixed.
pub fn cavity_violation<R: Real>(
    base: &[R],
    terms: &[&Term],
    lambda: &[R],
    init: &[(R, R)],
    rhs: &[Vec<R>],
    opts: &RegionSolveOptions,
) -> Vec<R> {
    let rs = solve_region_belief(base, terms, lambda, init, opts);
    let rr = RegionResponse::new(&rs.log_q, terms, lambda);
    let q: Vec<R> = rs.log_q.iter().map(|v| v.exp()).collect();
    terms
        .iter()
        .zip(rhs)
        .map(|(t, r)| {
            let chi = match rr.solve(r) {
                Ok(dq) => q.iter().zip(&dq).zip(&t.f2).map(|((p, d), &f)| *p * *d * R::lit(f)).sum(),
                Err(_) => R::nan(),
            };
            term_covariance(&rs.log_q, t) - chi
        })
        .collect()
}

/// `Δ_α` and `∂Δ_α/∂λ_α` by forward-mode differentiation of the cavity map.
pub fn cavity_jacobian(
    base: &[f64],
    terms: &[&Term],
    lambda: &[f64],
    init: &[(f64, f64)],
    rhs: &[Vec<f64>],
    opts: &RegionSolveOptions,
) -> (Vec<f64>, Matrix<f64>) {
    let n = lambda.len();
    let base_d: Vec<Dual> = base.iter().map(|&v| Dual::constant(v)).collect();
    let init_d: Vec<(Dual, Dual)> = init.iter().map(|&(a, b)| (Dual::constant(a), Dual::constant(b))).collect();
    let rhs_d: Vec<Vec<Dual>> = rhs.iter().map(|r| r.iter().map(|&v| Dual::constant(v)).collect()).collect();
    let mut jac = Matrix::zeros(n);
    let mut delta = vec![0.0; n];
    for k in 0..n {
        let lam: Vec<Dual> = lambda.iter().enumerate().map(|(l, &v)| Dual::new(v, if l == k { 1.0 } else { 0.0 })).collect();
        let out = cavity_violation(&base_d, terms, &lam, &init_d, &rhs_d, opts);
        for (r, d) in out.iter().enumerate() {
            jac[(r, k)] = d.du;
            if k == 0 {
                delta[r] = d.re;
            }
        }
    }
    (delta, jac)
}

/// A multiplier step and whether the gradient fallback produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaStep {
    pub step: Vec<f64>,
    pub fallback: bool,
}

/// Newton step `δλ = −J⁻¹ Δ`, scaled so that `max |δλ| ≤ clip`. A singular
/// Jacobian falls back to a Cauchy step along `−Jᵀ Δ`.
pub fn newton_lambda_update(delta: &[f64], jac: &Matrix<f64>, clip: f64) -> LambdaStep {
    let n = delta.len();
    if delta.iter().all(|d| *d == 0.0) {
        return LambdaStep { step: vec![0.0; n], fallback: false };
    }
    let neg: Vec<f64> = delta.iter().map(|d| -d).collect();
    let (mut step, fallback) = match jac.solve(&neg) {
        Some(s) if s.iter().all(|v| v.is_finite()) => (s, false),
        _ => {
            let g = jac.transpose().mul_vec(delta);
            let jg = jac.mul_vec(&g);
            let den: f64 = jg.iter().map(|v| v * v).sum();
            let num: f64 = g.iter().map(|v| v * v).sum();
            let eta = if den > 0.0 { num / den } else { 0.0 };
            (g.iter().map(|v| -eta * v).collect(), true)
        }
    };
    let m = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > clip {
        for v in step.iter_mut() {
            *v *= clip / m;
        }
    }
    LambdaStep { step, fallback }
}

/// Linearized single-multiplier update `δλ = (C − χ_ij)/(χ_ii χ_jj)`.
pub fn sherman_morrison_update(
    chi_ii: f64,
    chi_jj: f64,
    chi_ij: f64,
    c_ij: f64,
    constraint: usize,
) -> Result<f64, ConstraintError> {
    let den = chi_ii * chi_jj;
    if den == 0.0 || !den.is_finite() {
        return Err(ConstraintError::VanishingDiagonal(constraint));
    }
    Ok((c_ij - chi_ij) / den)
}
