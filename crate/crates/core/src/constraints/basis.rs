/// Single-variable statistic families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisKind {
    /// Orthonormal, orthogonal to the constant; `x/√2` for two states.
    Orthonormal,
    /// The orthonormal basis rotated by an angle in its first two directions.
    Rotated(f64),
    /// Indicators `δ_{x,y}` of the first `Y−1` states.
    Delta,
}

/// Per-variable statistics, `Y_i − 1` coefficient vectors each.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticBasis {
    pub kind: BasisKind,
    stats: Vec<Vec<Vec<f64>>>,
}

/// Orthonormal contrasts over `card` states, each orthogonal to the constant.
pub fn helmert(card: usize) -> Vec<Vec<f64>> {
    (1..card)
        .map(|k| {
            let norm = ((k * (k + 1)) as f64).sqrt();
            (0..card)
                .map(|y| match y.cmp(&k) {
                    std::cmp::Ordering::Less => -1.0 / norm,
                    std::cmp::Ordering::Equal => k as f64 / norm,
                    std::cmp::Ordering::Greater => 0.0,
                })
                .collect()
        })
        .collect()
}

impl StatisticBasis {
    pub fn new(kind: BasisKind, cards: &[usize]) -> Self {
        let stats = cards
            .iter()
            .map(|&card| match kind {
                BasisKind::Orthonormal => helmert(card),
                BasisKind::Rotated(theta) => {
                    let mut h = helmert(card);
                    if h.len() >= 2 {
                        let (c, s) = (theta.cos(), theta.sin());
                        let (a, b) = (h[0].clone(), h[1].clone());
                        h[0] = a.iter().zip(&b).map(|(x, y)| c * x - s * y).collect();
                        h[1] = a.iter().zip(&b).map(|(x, y)| s * x + c * y).collect();
                    }
                    h
                }
                BasisKind::Delta => (0..card - 1)
                    .map(|y| {
                        let mut d = vec![0.0; card];
                        d[y] = 1.0;
                        d
                    })
                    .collect(),
            })
            .collect();
        Self { kind, stats }
    }

    pub fn stats(&self, var: usize) -> &[Vec<f64>] {
        &self.stats[var]
    }
}
