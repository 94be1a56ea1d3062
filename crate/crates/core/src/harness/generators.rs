//! Seeded model generators. All randomness comes from ChaCha8 seeded with a
//! `u64`, so instances are identical across platforms.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::HarnessError;
use crate::graph_model::{FactorGraph, FactorTable, IsingModel};

/// Name of the generator algorithm, recorded in output metadata.
pub const RNG_NAME: &str = "ChaCha8";

const POTTS_ATTEMPTS: usize = 10_000;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Ferromagnet with unit coupling on every pair and field `h` on every spin.
pub fn gen_fully_connected(n: usize, h: f64) -> Result<FactorGraph<f64>, HarnessError> {
    if n < 2 {
        return Err(HarnessError::Generator(format!("fully connected model needs N >= 2, got {n}")));
    }
    let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j, 1.0))).collect();
    Ok(IsingModel::new(vec![h; n], edges)?.to_factor_graph()?)
}

/// `L × L` open-boundary grid, fields uniform on `[−0.25, 0.25]`, couplings
/// uniform on `[−1, 1]`.
pub fn wainwright_jordan_model(l: usize, seed: u64) -> Result<IsingModel, HarnessError> {
    if l < 2 {
        return Err(HarnessError::Generator(format!("grid side must be >= 2, got {l}")));
    }
    let mut r = rng(seed);
    let n = l * l;
    let fields: Vec<f64> = (0..n).map(|_| r.gen_range(-0.25..=0.25)).collect();
    let mut edges = Vec::with_capacity(2 * l * (l - 1));
    for row in 0..l {
        for col in 0..l {
            let v = row * l + col;
            if col + 1 < l {
                edges.push((v, v + 1, r.gen_range(-1.0..=1.0)));
            }
            if row + 1 < l {
                edges.push((v, v + l, r.gen_range(-1.0..=1.0)));
            }
        }
    }
    Ok(IsingModel::new(fields, edges)?)
}

pub fn gen_wainwright_jordan(l: usize, seed: u64) -> Result<FactorGraph<f64>, HarnessError> {
    Ok(wainwright_jordan_model(l, seed)?.to_factor_graph()?)
}

/// Simple 3-regular graph by the configuration model with rejection.
pub fn random_cubic_graph(n: usize, r: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>, HarnessError> {
    if n < 4 || n % 2 != 0 {
        return Err(HarnessError::Generator(format!("3-regular graph needs even N >= 4, got {n}")));
    }
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| [v, v, v]).collect();
    'attempt: for _ in 0..POTTS_ATTEMPTS {
        stubs.shuffle(r);
        let mut edges: Vec<(usize, usize)> = stubs.chunks(2).map(|p| (p[0].min(p[1]), p[0].max(p[1]))).collect();
        edges.sort_unstable();
        for w in edges.windows(2) {
            if w[0] == w[1] {
                continue 'attempt;
            }
        }
        if edges.iter().any(|(a, b)| a == b) {
            continue;
        }
        return Ok(edges);
    }
    Err(HarnessError::RejectionCap(POTTS_ATTEMPTS))
}

/// Three-state Potts model on a random 3-regular graph: field `(e⁴, 1, 1)` on
/// each variable and edge factors `exp(J δ_{x_i, x_j})` with `J = ±1`.
pub fn gen_potts_regular(n: usize, seed: u64) -> Result<FactorGraph<f64>, HarnessError> {
    let mut r = rng(seed);
    let edges = random_cubic_graph(n, &mut r)?;
    let mut factors = Vec::with_capacity(n + edges.len());
    for v in 0..n {
        factors.push(FactorTable::new(vec![v], vec![3], vec![4f64.exp(), 1.0, 1.0]));
    }
    for (a, b) in edges {
        let j: f64 = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
        let table = (0..9).map(|k| if k % 3 == k / 3 { j.exp() } else { 1.0 }).collect();
        factors.push(FactorTable::new(vec![a, b], vec![3, 3], table));
    }
    Ok(FactorGraph::new(vec![3; n], factors)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fully_connected_counts() {
        let fg = gen_fully_connected(2, 0.5).unwrap();
        assert_eq!(fg.num_factors(), 3);
        let fg = gen_fully_connected(10, 1.0).unwrap();
        assert_eq!(fg.num_factors(), 55);
        assert!(fg.factors()[..10].iter().all(|f| f.members().len() == 1));
        assert!(gen_fully_connected(1, 0.0).is_err());
    }

    #[test]
    fn grid_counts_and_ranges() {
        for (l, e) in [(4, 24), (7, 84)] {
            let m = wainwright_jordan_model(l, 3).unwrap();
            assert_eq!(m.num_vars(), l * l);
            assert_eq!(m.edges.len(), e);
        }
        for seed in 0..20 {
            let m = wainwright_jordan_model(5, seed).unwrap();
            assert!(m.fields.iter().all(|h| h.abs() <= 0.25));
            assert!(m.edges.iter().all(|e| e.2.abs() <= 1.0));
        }
    }

    #[test]
    fn potts_structure() {
        let fg = gen_potts_regular(40, 11).unwrap();
        assert_eq!(fg.num_factors(), 40 + 60);
        let mut deg = [0usize; 40];
        let mut seen = std::collections::BTreeSet::new();
        for f in &fg.factors()[40..] {
            let m = f.members();
            assert!(m[0] != m[1] && seen.insert((m[0], m[1])));
            deg[m[0]] += 1;
            deg[m[1]] += 1;
            let d = f.table()[0];
            assert!(d == 1f64.exp() || d == (-1f64).exp());
            assert_eq!(f.table()[1], 1.0);
        }
        assert!(deg.iter().all(|&d| d == 3));
        assert_eq!(fg.factors()[0].table(), &[4f64.exp(), 1.0, 1.0]);
        assert!(gen_potts_regular(7, 0).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(gen_potts_regular(12, 5).unwrap(), gen_potts_regular(12, 5).unwrap());
        assert_eq!(gen_wainwright_jordan(4, 5).unwrap(), gen_wainwright_jordan(4, 5).unwrap());
        assert_ne!(gen_wainwright_jordan(4, 5).unwrap(), gen_wainwright_jordan(4, 6).unwrap());
    }
}
