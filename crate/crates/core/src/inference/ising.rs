//! Message passing specialized to pairwise binary models.
//!
//! Messages are half log-ratios `u_{e→i}`; each edge keeps two local
//! magnetizations made self-consistent after every message update.

use crate::error::InferenceError;
use crate::graph_model::IsingModel;

/// Spin-basis multipliers: `diag[i]` weights `½(1 − M_i²)`, `edge[e]` weights
/// the connected correlation of edge `e`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IsingLambda {
    pub diag: Vec<f64>,
    pub edge: Vec<f64>,
}

impl IsingLambda {
    pub fn zeros(model: &IsingModel) -> Self {
        Self { diag: vec![0.0; model.num_vars()], edge: vec![0.0; model.edges.len()] }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IsingOptions {
    pub tol_msg: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub inner_tol: f64,
    pub inner_max: usize,
}

impl Default for IsingOptions {
    fn default() -> Self {
        Self { tol_msg: 1e-10, max_iter: 10_000, damping: 0.0, inner_tol: 1e-12, inner_max: 500 }
    }
}

/// Edge beliefs, local magnetizations and messages.
#[derive(Debug, Clone)]
pub struct EdgeState {
    /// `q_e[x_i + 2 x_j]`, state 0 = spin −1.
    pub q: Vec<[f64; 4]>,
    /// `(M_{e,i}, M_{e,j})`.
    pub m: Vec<[f64; 2]>,
    /// `(u_{e→i}, u_{e→j})`.
    pub u: Vec<[f64; 2]>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    /// Edges whose magnetization loop needed the bisection fallback and still failed.
    pub inner_failures: usize,
}

impl EdgeState {
    /// `E[x_i]` from the first edge containing `i`.
    pub fn magnetization(&self, model: &IsingModel, i: usize) -> f64 {
        for (e, &(a, b, _)) in model.edges.iter().enumerate() {
            if a == i {
                return self.m[e][0];
            }
            if b == i {
                return self.m[e][1];
            }
        }
        model.fields[i].tanh()
    }

    /// `E[x_i x_j]` of edge `e`.
    pub fn correlation(&self, e: usize) -> f64 {
        let q = &self.q[e];
        q[0] + q[3] - q[1] - q[2]
    }
}

fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// `atanh(tanh k · tanh a)` without overflow.
pub fn cavity_message(k: f64, a: f64) -> f64 {
    0.5 * (log_cosh(k + a) - log_cosh(k - a))
}

/// Pair belief of `exp(k s t + a s + b t)`.
fn pair(k: f64, a: f64, b: f64) -> [f64; 4] {
    let l = [k - a - b, -k + a - b, -k - a + b, k + a + b];
    let mx = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = l.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = w.iter().sum();
    [w[0] / z, w[1] / z, w[2] / z, w[3] / z]
}

fn mags(q: &[f64; 4]) -> [f64; 2] {
    [q[1] + q[3] - q[0] - q[2], q[2] + q[3] - q[0] - q[1]]
}

struct EdgeLocal {
    k: f64,
    ci: f64,
    cj: f64,
    li: f64,
    lj: f64,
    lij: f64,
}

impl EdgeLocal {
    fn fields(&self, m: [f64; 2]) -> (f64, f64) {
        (self.ci + self.li * m[0] + self.lij * m[1], self.cj + self.lj * m[1] + self.lij * m[0])
    }

    fn map(&self, m: [f64; 2]) -> [f64; 2] {
        let (a, b) = self.fields(m);
        mags(&pair(self.k, a, b))
    }

    /// Self-consistent `(M_i, M_j)`; plain iteration, then alternating bisection.
    fn solve(&self, mut m: [f64; 2], tol: f64, cap: usize) -> ([f64; 2], bool) {
        if self.li == 0.0 && self.lj == 0.0 && self.lij == 0.0 {
            return (self.map(m), true);
        }
        for _ in 0..cap {
            let n = self.map(m);
            let r = (n[0] - m[0]).abs().max((n[1] - m[1]).abs());
            m = n;
            if r <= tol {
                return (m, true);
            }
        }
        for _ in 0..cap {
            let old = m;
            for c in 0..2 {
                let (mut lo, mut hi) = (-1.0, 1.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let mut t = m;
                    t[c] = mid;
                    if self.map(t)[c] - mid > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-16 {
                        break;
                    }
                }
                m[c] = 0.5 * (lo + hi);
            }
            let n = self.map(m);
            if (n[0] - m[0]).abs().max((n[1] - m[1]).abs()) <= tol || (old[0] - m[0]).abs().max((old[1] - m[1]).abs()) == 0.0 {
                let ok = (n[0] - m[0]).abs().max((n[1] - m[1]).abs()) <= tol;
                return (m, ok);
            }
        }
        (m, false)
    }
}

/// Message passing for an Ising model at multipliers `lambda`.
pub fn clbp_ising(model: &IsingModel, lambda: &IsingLambda, opts: &IsingOptions) -> Result<EdgeState, InferenceError> {
    let n = model.num_vars();
    let ne = model.edges.len();
    if lambda.diag.len() != n || lambda.edge.len() != ne {
        return Err(InferenceError::LambdaLength { got: lambda.diag.len() + lambda.edge.len(), expected: n + ne });
    }
    let mut st = EdgeState {
        q: vec![[0.25; 4]; ne],
        m: vec![[0.0; 2]; ne],
        u: vec![[0.0; 2]; ne],
        converged: false,
        iterations: 0,
        residual: f64::INFINITY,
        inner_failures: 0,
    };
    let mut s = vec![0.0; n];
    for it in 1..=opts.max_iter {
        let mut change = 0.0f64;
        st.inner_failures = 0;
        for (e, &(i, j, coupling)) in model.edges.iter().enumerate() {
            let loc = EdgeLocal {
                k: coupling - lambda.edge[e],
                ci: model.fields[i] + s[i] - st.u[e][0],
                cj: model.fields[j] + s[j] - st.u[e][1],
                li: lambda.diag[i],
                lj: lambda.diag[j],
                lij: lambda.edge[e],
            };
            let (m, ok) = loc.solve(st.m[e], opts.inner_tol, opts.inner_max);
            if !ok {
                st.inner_failures += 1;
            }
            if !(m[0].is_finite() && m[1].is_finite()) {
                return Err(InferenceError::NonFinite { region: e, iteration: it });
            }
            let (a, b) = loc.fields(m);
            st.m[e] = m;
            st.q[e] = pair(loc.k, a, b);
            let new_u = [loc.lij * m[1] + cavity_message(loc.k, b), loc.lij * m[0] + cavity_message(loc.k, a)];
            for c in 0..2 {
                let v = (1.0 - opts.damping) * new_u[c] + opts.damping * st.u[e][c];
                change = change.max((v - st.u[e][c]).abs());
                let var = if c == 0 { i } else { j };
                s[var] += v - st.u[e][c];
                st.u[e][c] = v;
            }
        }
        st.iterations = it;
        st.residual = change;
        if !change.is_finite() {
            return Err(InferenceError::NonFinite { region: 0, iteration: it });
        }
        if change <= opts.tol_msg {
            st.converged = true;
            break;
        }
    }
    Ok(st)
}
