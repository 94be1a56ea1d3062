//! Shared model builders for integration tests.
#![allow(dead_code)]

use ::clbp::graph_model::{FactorGraph, FactorTable, IsingModel};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn table<R: Rng>(rng: &mut R, cards: &[usize], scale: f64) -> Vec<f64> {
    let n: usize = cards.iter().product();
    (0..n).map(|_| (scale * rng.gen_range(-1.0..=1.0)).exp()).collect()
}

/// Random cards in `2..=4` whose product stays under `cap`.
pub fn mixed_cards<R: Rng>(rng: &mut R, n: usize, cap: usize) -> Vec<usize> {
    loop {
        let cards: Vec<usize> = (0..n).map(|_| rng.gen_range(2..=4)).collect();
        if cards.iter().product::<usize>() <= cap {
            return cards;
        }
    }
}

/// Unary factors on every variable, pairwise factors with probability `p`,
/// and one three-variable factor.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, cap: usize) -> FactorGraph<f64> {
    let cards = mixed_cards(rng, n, cap);
    let mut factors = Vec::new();
    for i in 0..n {
        factors.push(FactorTable::new(vec![i], vec![cards[i]], table(rng, &[cards[i]], 0.5)));
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.35) {
                let c = vec![cards[i], cards[j]];
                factors.push(FactorTable::new(vec![i, j], c.clone(), table(rng, &c, 1.0)));
            }
        }
    }
    if n >= 3 {
        let c = vec![cards[0], cards[1], cards[2]];
        factors.push(FactorTable::new(vec![0, 1, 2], c.clone(), table(rng, &c, 0.5)));
    }
    FactorGraph::new(cards, factors).unwrap()
}

/// Random tree over `n` variables with unary factors, two or three states each.
pub fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> (FactorGraph<f64>, Vec<(usize, usize)>) {
    let cards: Vec<usize> = (0..n).map(|_| rng.gen_range(2..=3)).collect();
    let mut factors = Vec::new();
    let mut edges = Vec::new();
    for i in 0..n {
        factors.push(FactorTable::new(vec![i], vec![cards[i]], table(rng, &[cards[i]], 0.7)));
    }
    for i in 1..n {
        let j = rng.gen_range(0..i);
        let c = vec![cards[j], cards[i]];
        factors.push(FactorTable::new(vec![j, i], c.clone(), table(rng, &c, 1.2)));
        edges.push((j, i));
    }
    (FactorGraph::new(cards, factors).unwrap(), edges)
}

/// Four-spin cycle whose coupling signs multiply to −1.
pub fn frustrated_cycle(rng: &mut ChaCha8Rng) -> FactorGraph<f64> {
    let neg = rng.gen_range(0..4);
    let edges: Vec<(usize, usize, f64)> = (0..4)
        .map(|k| (k, (k + 1) % 4, if k == neg { -2.0 } else { 2.0 }))
        .collect();
    let fields = (0..4).map(|_| rng.gen_range(-0.3..=0.3)).collect();
    IsingModel::new(fields, edges).unwrap().to_factor_graph().unwrap()
}

/// Spin expectation `q(+1) − q(−1)`.
pub fn spin_mean(m: &[f64]) -> f64 {
    m[1] - m[0]
}
