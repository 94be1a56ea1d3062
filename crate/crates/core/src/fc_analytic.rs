//! Closed forms for the fully connected ferromagnet
//! `p(x) ∝ exp((h + Σ_i x_i)² / 2T)`, i.e. unit couplings and field `h` at
//! temperature `T`.
//!
//! Symmetric solutions are parametrized by the pair belief
//! `q(x1, x2) ∝ exp(K x1 x2 + g (x1 + x2))` with `K = 1/T − λ1`, which keeps
//! every probability strictly positive and makes the coupling stationarity
//! condition hold by construction.

use crate::error::FcError;
use crate::inference::ising::cavity_message;
use crate::linalg::Matrix;
use crate::scalar::{log_sum_exp, Dual, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcModel {
    pub n: usize,
    pub h: f64,
    pub t: f64,
}

impl FcModel {
    pub fn new(n: usize, h: f64, t: f64) -> Result<Self, FcError> {
        if n < 2 {
            return Err(FcError::Model(format!("need at least 2 variables, got {n}")));
        }
        if !(t > 0.0 && t.is_finite()) || !h.is_finite() {
            return Err(FcError::Model(format!("invalid field {h} or temperature {t}")));
        }
        Ok(Self { n, h, t })
    }

    fn at(self, t: f64) -> Self {
        Self { t, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FcRegime {
    None,
    BetheDiag,
    BetheOffDiag,
    BetheOnOff,
    MeanField,
    MeanFieldDiag,
}

impl FcRegime {
    fn mean_field(self) -> bool {
        matches!(self, FcRegime::MeanField | FcRegime::MeanFieldDiag)
    }

    fn diag(self) -> bool {
        matches!(self, FcRegime::BetheDiag | FcRegime::BetheOnOff | FcRegime::MeanFieldDiag)
    }

    fn off(self) -> bool {
        matches!(self, FcRegime::BetheOffDiag | FcRegime::BetheOnOff)
    }

}

/// Exact pair marginal `p(x_i, x_j)`, indexed `x_i + 2 x_j` with state 0 = spin −1.
pub fn fc_exact_pair(model: &FcModel) -> Result<[f64; 4], FcError> {
    if model.n > 10_000 {
        return Err(FcError::Model(format!("N = {} exceeds the binomial-sum limit", model.n)));
    }
    let (n, t, h) = (model.n, model.t, model.h);
    let m = n - 2;
    let ln_binom: Vec<f64> = {
        let mut v = vec![0.0; m + 1];
        for k in 1..=m {
            v[k] = v[k - 1] + ((m - k + 1) as f64).ln() - (k as f64).ln();
        }
        v
    };
    let mut out = [0.0; 4];
    let mut logs = [0.0; 4];
    for (idx, slot) in logs.iter_mut().enumerate() {
        let xi = if idx & 1 == 1 { 1.0 } else { -1.0 };
        let xj = if idx & 2 == 2 { 1.0 } else { -1.0 };
        let terms: Vec<f64> = (0..=m)
            .map(|k| {
                let r = h + (m as f64 - 2.0 * k as f64);
                ln_binom[k] + r * r / (2.0 * t) + xi * xj / t + r * (xi + xj) / t
            })
            .collect();
        *slot = log_sum_exp(&terms);
    }
    let z = log_sum_exp(&logs);
    for (o, l) in out.iter_mut().zip(&logs) {
        *o = (l - z).exp();
    }
    Ok(out)
}

/// Which root of the message equation to follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Branch {
    #[default]
    HighT,
    LowT,
}

/// Cavity field `h_→` of the unconstrained Bethe fixed point,
/// `h_→ = h + (N−2) T atanh[tanh(1/T) tanh(h_→/T)]`.
pub fn fc_bethe_message(model: &FcModel) -> f64 {
    fc_bethe_message_branch(model, Branch::HighT)
}

pub fn fc_bethe_message_branch(model: &FcModel, branch: Branch) -> f64 {
    let (t, h) = (model.t, model.h);
    let k = (model.n - 2) as f64;
    let f = |x: f64| h + k * t * cavity_message(1.0 / t, x / t);
    let mut x = match branch {
        Branch::HighT => h,
        Branch::LowT => h + k * if h < 0.0 { -1.0 } else { 1.0 },
    };
    for _ in 0..100_000 {
        let nx = f(x);
        if (nx - x).abs() <= 1e-15 * (1.0 + x.abs()) {
            return nx;
        }
        x = nx;
    }
    // Slow convergence near a critical point: bisect around the last iterate.
    let (mut lo, mut hi) = (h - k - 1.0, h + k + 1.0);
    if branch == Branch::HighT && h != 0.0 {
        if h > 0.0 {
            lo = 0.0;
        } else {
            hi = 0.0;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) - mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Pair-belief summaries shared by the residuals.
struct Pair<R> {
    m: R,
    c: R,
    one_m2: R,
    /// `(1 − M² − C)(1 − M² + C)`.
    d: R,
    /// `Σ (x1 x2 / 4) log q`.
    k_log: R,
    /// `atanh M`.
    atanh_m: R,
    /// `Σ (x1/2) q_j(x2) log(q_ij / q_i)`.
    cavity: R,
}

fn bethe_pair<R: Real>(g: R, k: R) -> Pair<R> {
    let two = R::lit(2.0);
    let lw = [k - two * g, -k, -k, k + two * g];
    let lz = log_sum_exp(&lw);
    let lq: Vec<R> = lw.iter().map(|&v| v - lz).collect();
    let q: Vec<R> = lq.iter().map(|v| v.exp()).collect();
    let (t, u, s) = (q[0], q[1], q[3]);
    let m = s - t;
    let one_m2 = R::lit(4.0) * (t + u) * (s + u);
    let c = one_m2 - R::lit(4.0) * u;
    let d = R::lit(16.0) * u * (two * s * t + u * (s + t));
    let k_log = (lq[0] + lq[3] - lq[1] - lq[2]) / R::lit(4.0);
    let l_plus = (s + u).ln();
    let l_minus = (t + u).ln();
    let half = R::lit(0.5);
    let mut cavity = R::zero();
    for idx in 0..4 {
        let x1 = if idx & 1 == 1 { R::one() } else { -R::one() };
        let plus2 = idx & 2 == 2;
        let qj = if plus2 { s + u } else { t + u };
        let lqi = if idx & 1 == 1 { l_plus } else { l_minus };
        cavity += half * x1 * qj * (lq[idx] - lqi);
    }
    Pair { m, c, one_m2, d, k_log, atanh_m: half * (l_plus - l_minus), cavity }
}

struct Unpacked<R> {
    lambda0: R,
    lambda1: R,
}

fn unpack<R: Real>(regime: FcRegime, x: &[R]) -> Unpacked<R> {
    let mut k = 1;
    let mut next = |on: bool| {
        if on {
            k += 1;
            x[k - 1]
        } else {
            R::zero()
        }
    };
    let lambda0 = next(regime.diag());
    let lambda1 = next(regime.off());
    Unpacked { lambda0, lambda1 }
}

/// `(χ_ii, χ_ij)` from the inverse-response entries `a` and `b`.
fn chi_from_ab<R: Real>(a: R, b: R, n: usize) -> (R, R) {
    let den = (a - b) * (a + R::of_usize(n - 1) * b);
    ((a + R::of_usize(n - 2) * b) / den, -b / den)
}

struct Evaluated<R> {
    residual: Vec<R>,
    m: R,
    c: R,
    one_m2: R,
    chi_ii: R,
    chi_ij: R,
    den: R,
}

fn evaluate<R: Real>(model: &FcModel, regime: FcRegime, x: &[R]) -> Evaluated<R> {
    let n = model.n;
    let nm1 = R::of_usize(n - 1);
    let inv_t = R::lit(1.0 / model.t);
    let h_t = R::lit(model.h / model.t);
    let u = unpack(regime, x);
    let (m, c, one_m2, saddle, a, b) = if regime.mean_field() {
        let mm = x[0];
        let m = mm.tanh();
        let e = (-R::lit(2.0) * mm.abs()).exp();
        let one_m2 = R::lit(4.0) * e / ((R::one() + e) * (R::one() + e));
        let saddle = -(nm1 * m * inv_t + u.lambda0 * m) - h_t + mm;
        (m, R::zero(), one_m2, saddle, R::one() / one_m2 - u.lambda0, -inv_t)
    } else {
        let p = bethe_pair(x[0], inv_t - u.lambda1);
        let saddle = -(nm1 * p.m * inv_t + u.lambda0 * p.m) - h_t + p.atanh_m + nm1 * p.cavity;
        let a = (R::one() + nm1 * p.c * p.c / p.d) / p.one_m2 - u.lambda0;
        let b = -inv_t + p.k_log - p.c / p.d;
        (p.m, p.c, p.one_m2, saddle, a, b)
    };
    let (chi_ii, chi_ij) = chi_from_ab(a, b, n);
    let den = (a - b) * (a + nm1 * b);
    let mut residual = vec![saddle];
    if regime.diag() {
        residual.push(chi_ii / one_m2 - R::one());
    }
    if regime.off() {
        residual.push((c - chi_ij) / one_m2);
    }
    Evaluated { residual, m, c, one_m2, chi_ii, chi_ij, den }
}

/// `χ_ii` and `χ_ij` from symmetric `M`, `C` and `λ0`.
pub fn fc_chi(m: f64, c: f64, lambda0: f64, model: &FcModel) -> Result<(f64, f64), FcError> {
    let n = model.n;
    let q = [
        (1.0 - m) * (1.0 - m) + c,
        (1.0 + m) * (1.0 - m) - c,
        (1.0 - m) * (1.0 + m) - c,
        (1.0 + m) * (1.0 + m) + c,
    ];
    let lq: Vec<f64> = q.iter().map(|v| (v / 4.0).ln()).collect();
    let k_log = (lq[0] + lq[3] - lq[1] - lq[2]) / 4.0;
    let one_m2 = 1.0 - m * m;
    let d = one_m2 * one_m2 - c * c;
    let a = (1.0 + (n - 1) as f64 * c * c / d) / one_m2 - lambda0;
    let b = -1.0 / model.t + k_log - c / d;
    let den = (a - b) * (a + (n - 1) as f64 * b);
    if den == 0.0 || !den.is_finite() {
        return Err(FcError::Singular(den));
    }
    Ok(chi_from_ab(a, b, n))
}

/// Mean-field variant of [`fc_chi`].
pub fn fc_chi_mean_field(m: f64, lambda0: f64, model: &FcModel) -> Result<(f64, f64), FcError> {
    let a = 1.0 / (1.0 - m * m) - lambda0;
    let b = -1.0 / model.t;
    let den = (a - b) * (a + (model.n - 1) as f64 * b);
    if den == 0.0 || !den.is_finite() {
        return Err(FcError::Singular(den));
    }
    Ok(chi_from_ab(a, b, model.n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcSolution {
    pub model: FcModel,
    pub regime: FcRegime,
    pub m: f64,
    pub c: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    /// Cavity field `h_→` (Bethe) or `T atanh M` (mean field).
    pub h_msg: f64,
    pub chi_ii: f64,
    pub chi_ij: f64,
    pub residual: f64,
    pub hessian_pd: bool,
    pub pair_nonneg: bool,
}

impl FcSolution {
    /// Raw unknowns `(g, λ0?, λ1?)`.
    fn unknowns(&self) -> Vec<f64> {
        let mut x = vec![self.h_msg / self.model.t];
        if self.regime.diag() {
            x.push(self.lambda0);
        }
        if self.regime.off() {
            x.push(self.lambda1);
        }
        x
    }

    /// `q(x1, x2)` indexed `x1 + 2 x2`.
    pub fn pair(&self) -> [f64; 4] {
        let m = self.m;
        let c = self.c;
        [
            ((1.0 - m) * (1.0 - m) + c) / 4.0,
            ((1.0 + m) * (1.0 - m) - c) / 4.0,
            ((1.0 - m) * (1.0 + m) - c) / 4.0,
            ((1.0 + m) * (1.0 + m) + c) / 4.0,
        ]
    }
}

fn jacobian(model: &FcModel, regime: FcRegime, x: &[f64]) -> (Vec<f64>, Matrix<f64>) {
    let n = x.len();
    let mut jac = Matrix::zeros(n);
    let mut f = vec![0.0; n];
    for k in 0..n {
        let xd: Vec<Dual> = x.iter().enumerate().map(|(i, &v)| Dual::new(v, if i == k { 1.0 } else { 0.0 })).collect();
        let e = evaluate(model, regime, &xd);
        for (r, v) in e.residual.iter().enumerate() {
            jac[(r, k)] = v.du;
            f[r] = v.re;
        }
    }
    (f, jac)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Damped Newton from `x0`; `None` if the residual cannot be driven below `tol`.
fn newton(model: &FcModel, regime: FcRegime, x0: &[f64], tol: f64) -> Option<Vec<f64>> {
    let mut x = x0.to_vec();
    for _ in 0..200 {
        let (f, jac) = jacobian(model, regime, &x);
        let r0 = norm(&f);
        if !r0.is_finite() {
            return None;
        }
        if r0 <= tol {
            return Some(x);
        }
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        let dx = jac.solve(&neg)?;
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + s * d).collect();
            let r = norm(&evaluate(model, regime, &trial).residual);
            if r.is_finite() && r < r0 {
                x = trial;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    let r = norm(&evaluate(model, regime, &x).residual);
    (r <= tol).then_some(x)
}

const ROOT_TOL: f64 = 1e-12;

fn finish(model: &FcModel, regime: FcRegime, x: &[f64]) -> Option<FcSolution> {
    let e = evaluate(model, regime, x);
    let u = unpack(regime, x);
    if e.den == 0.0 || !e.den.is_finite() || !e.m.is_finite() {
        return None;
    }
    let h_msg = model.t * x[0];
    let mut sol = FcSolution {
        model: *model,
        regime,
        m: e.m,
        c: e.c,
        lambda0: u.lambda0,
        lambda1: u.lambda1,
        h_msg,
        chi_ii: e.chi_ii,
        chi_ij: e.chi_ij,
        residual: norm(&e.residual),
        hessian_pd: false,
        pair_nonneg: false,
    };
    sol.pair_nonneg = sol.pair().iter().all(|p| *p >= 0.0) && e.one_m2 >= 0.0;
    sol.hessian_pd = hessian_pd(&sol);
    Some(sol)
}

/// Free-energy gradient in `(M, C)` (per variable, per edge) evaluated at the
/// pair belief with field `g` and coupling `k`, together with `(M, C)`.
fn gradient_at<R: Real>(model: &FcModel, g: R, k: R, lambda0: R, lambda1: R) -> ([R; 2], R, R) {
    let inv_t = R::lit(1.0 / model.t);
    let nm1 = R::of_usize(model.n - 1);
    let p = bethe_pair(g, k);
    let s1 = -(nm1 * p.m * inv_t + lambda0 * p.m) - R::lit(model.h / model.t) + p.atanh_m + nm1 * p.cavity;
    let s2 = -(inv_t - lambda1) + p.k_log;
    ([s1, s2], p.m, p.c)
}

/// Positive definiteness of the free-energy Hessian in `(M, C)` at fixed λ.
/// Evaluated through `HJ` with `J = ∂(M, C)/∂(g, K)`, which stays accurate
/// near saturation.
fn hessian_pd(sol: &FcSolution) -> bool {
    let n = sol.model.n as f64;
    if sol.regime.mean_field() {
        // d/dm of the stationarity condition in the chart M = tanh m.
        let t = sol.model.t;
        let one_m2 = 1.0 - sol.m * sol.m;
        return 1.0 - ((n - 1.0) / t + sol.lambda0) * one_m2 > 0.0 || sol.m.abs() == 1.0;
    }
    let g = sol.h_msg / sol.model.t;
    let k = 1.0 / sol.model.t - sol.lambda1;
    let l0 = Dual::constant(sol.lambda0);
    let l1 = Dual::constant(sol.lambda1);
    let (dg, mg, cg) = gradient_at(&sol.model, Dual::variable(g), Dual::constant(k), l0, l1);
    let (dk, mk, ck) = gradient_at(&sol.model, Dual::constant(g), Dual::variable(k), l0, l1);
    // Total free energy: N copies of the variable part, N(N−1)/2 of the edge part.
    let e = n * (n - 1.0) / 2.0;
    let hj = [[n * dg[0].du, n * dk[0].du], [e * dg[1].du, e * dk[1].du]];
    let j = [[mg.du, mk.du], [cg.du, ck.du]];
    // det J > 0 (a Fisher covariance composed with a unit-determinant map),
    // so det H has the sign of det(HJ); J alone underflows near saturation.
    let det_hj = hj[0][0] * hj[1][1] - hj[0][1] * hj[1][0];
    let q00 = j[0][0] * hj[0][0] + j[1][0] * hj[1][0];
    det_hj > 0.0 && q00 > 0.0
}

/// Local root search at `model.t` from an initial guess.
pub fn fc_solve_local(model: &FcModel, regime: FcRegime, seed: &FcSolution) -> Option<FcSolution> {
    let mut x0 = seed.unknowns();
    if seed.regime != regime {
        x0 = vec![seed.h_msg / seed.model.t];
        if regime.diag() {
            x0.push(if seed.regime.diag() { seed.lambda0 } else { 0.0 });
        }
        if regime.off() {
            x0.push(if seed.regime.off() { seed.lambda1 } else { 0.0 });
        }
    }
    if regime.mean_field() != seed.regime.mean_field() {
        x0[0] = if regime.mean_field() { seed.m.atanh() } else { seed.h_msg / seed.model.t };
    }
    if regime.mean_field() {
        x0[0] = seed.m.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh();
    } else {
        x0[0] *= seed.model.t / model.t;
    }
    let x = newton(model, regime, &x0, ROOT_TOL)?;
    finish(model, regime, &x)
}

/// Unconstrained solution used to seed continuation at either end of a grid.
pub fn fc_unconstrained(model: &FcModel, regime: FcRegime, branch: Branch) -> Option<FcSolution> {
    let base = if regime.mean_field() { FcRegime::MeanField } else { FcRegime::None };
    let x0 = if regime.mean_field() {
        let mut m = match branch {
            Branch::HighT => (model.h / model.t).tanh(),
            Branch::LowT => if model.h < 0.0 { -0.999 } else { 0.999 },
        };
        for _ in 0..100_000 {
            let nm = ((model.h + (model.n - 1) as f64 * m) / model.t).tanh();
            if (nm - m).abs() < 1e-15 {
                m = nm;
                break;
            }
            m = nm;
        }
        vec![m.clamp(-1.0 + 1e-16, 1.0 - 1e-16).atanh()]
    } else {
        vec![fc_bethe_message_branch(model, branch) / model.t]
    };
    let x = newton(model, base, &x0, ROOT_TOL)?;
    finish(model, base, &x)
}

/// Track a solution along `temps` (either order) by continuation, halving
/// the step on failure. A descending grid starts from the high-temperature
/// solution; an ascending grid starts from the unconstrained solution at the
/// first temperature where one is found and where the beliefs are not
/// saturated, since multipliers have no effect on saturated beliefs. Entries
/// after the branch is lost are `None`.
pub fn fc_continuation(n: usize, h: f64, regime: FcRegime, temps: &[f64]) -> Result<Vec<Option<FcSolution>>, FcError> {
    let mut out = vec![None; temps.len()];
    let Some(&t0) = temps.first() else { return Ok(out) };
    let descending = temps.len() < 2 || temps[1] < temps[0];
    let model = FcModel::new(n, h, t0)?;
    let fresh = |m: &FcModel| -> Option<FcSolution> {
        let branch = if descending { Branch::HighT } else { Branch::LowT };
        let start = fc_unconstrained(m, regime, branch)?;
        fc_solve_local(m, regime, &start).or_else(|| if descending { ramp(m, regime) } else { None })
    };
    let mut cur: Option<FcSolution> = None;
    for (k, &t) in temps.iter().enumerate() {
        let m = model.at(t);
        let next = match cur {
            Some(c) => step_to(&m, regime, &c),
            None => fresh(&m),
        };
        match next {
            Some(s) => {
                out[k] = Some(s);
                cur = Some(s);
            }
            None if descending || cur.is_some_and(|c| !saturated(&c)) => break,
            None => cur = None,
        }
        if !descending && cur.is_some_and(|c| saturated(&c)) {
            // Keep re-seeding until the branch carries information about λ.
            cur = None;
        }
    }
    Ok(out)
}

fn saturated(s: &FcSolution) -> bool {
    1.0 - s.m * s.m < 1e-10
}

/// Continue down from a much higher temperature, where constrained and
/// unconstrained solutions nearly coincide.
fn ramp(model: &FcModel, regime: FcRegime) -> Option<FcSolution> {
    let hot = model.at(model.t * 64.0);
    let s = fc_unconstrained(&hot, regime, Branch::HighT)?;
    let s = fc_solve_local(&hot, regime, &s)?;
    step_to(model, regime, &s)
}

fn step_to(target: &FcModel, regime: FcRegime, from: &FcSolution) -> Option<FcSolution> {
    let t_end = target.t;
    let mut cur = *from;
    let mut frac = 1.0f64;
    let min_frac = 1e-6;
    while (cur.model.t - t_end).abs() > 0.0 {
        let lt = cur.model.t.ln() + frac * (t_end.ln() - cur.model.t.ln());
        let t = if frac >= 1.0 || (lt.exp() - t_end).abs() < 1e-14 * t_end { t_end } else { lt.exp() };
        match fc_solve_local(&target.at(t), regime, &cur).filter(|s| continuous(&cur, s)) {
            Some(s) => {
                cur = s;
                frac = (frac * 2.0).min(1.0);
            }
            None => {
                frac *= 0.5;
                if frac < min_frac {
                    return None;
                }
            }
        }
    }
    Some(cur)
}

/// Rejects steps that jump to another root.
fn continuous(a: &FcSolution, b: &FcSolution) -> bool {
    let dl = (a.lambda0 - b.lambda0).abs().max((a.lambda1 - b.lambda1).abs());
    (a.m - b.m).abs() <= 0.05 && dl <= 0.25 * (1.0 + a.lambda0.abs().max(a.lambda1.abs()))
}

/// Solution at `model.t` continued from high temperature, else from low
/// temperature.
pub fn fc_solve_constrained(model: &FcModel, regime: FcRegime) -> Result<FcSolution, FcError> {
    let hi = (model.t * 16.0).max(50.0 * model.n as f64);
    let lo = (model.t / 16.0).min((model.n as f64 + model.h.abs()) / 100.0);
    for (a, b) in [(hi, model.t), (lo, model.t)] {
        if let Some(Some(s)) = fc_continuation(model.n, model.h, regime, &[a, b])?.get(1) {
            return Ok(*s);
        }
    }
    Err(FcError::NoSolution(model.t))
}
