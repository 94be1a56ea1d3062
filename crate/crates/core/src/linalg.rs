//! Small dense linear algebra over [`Real`]: the systems solved here are the
//! per-region Newton and response systems (a handful of unknowns) and the
//! dense fallback for the response equations (a few hundred unknowns).

use crate::scalar::Real;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<R> {
    n: usize,
    data: Vec<R>,
}

impl<R: Real> Matrix<R> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![R::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = R::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<R>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "matrix must be square");
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn mul_vec(&self, v: &[R]) -> Vec<R> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Solve `self · x = b` by Gaussian elimination with partial pivoting.
    /// Returns `None` when a pivot falls below `tiny` times the largest entry.
    pub fn solve(&self, b: &[R]) -> Option<Vec<R>> {
        let n = self.n;
        assert_eq!(b.len(), n);
        if n == 0 {
            return Some(Vec::new());
        }
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        let scale = a.iter().fold(R::zero(), |m, v| m.max(v.abs()));
        if !(scale > R::zero()) || !scale.is_finite() {
            return None;
        }
        let tiny = scale * R::lit(1e-14);
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col * n + col].abs();
            for r in col + 1..n {
                let v = a[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if !(best > tiny) {
                return None;
            }
            if piv != col {
                for c in 0..n {
                    a.swap(col * n + c, piv * n + c);
                }
                x.swap(col, piv);
            }
            let d = a[col * n + col];
            for r in col + 1..n {
                let f = a[r * n + col] / d;
                if f.is_inert_zero() {
                    continue;
                }
                for c in col..n {
                    let v = a[col * n + c];
                    a[r * n + c] -= f * v;
                }
                let xc = x[col];
                x[r] -= f * xc;
            }
        }
        for col in (0..n).rev() {
            let mut s = x[col];
            for c in col + 1..n {
                s -= a[col * n + c] * x[c];
            }
            x[col] = s / a[col * n + col];
        }
        Some(x)
    }

    /// Regularized least-squares solve `(AᵀA + εI) x = Aᵀb`; used when the
    /// square solve fails because of redundant equations.
    pub fn solve_least_squares(&self, b: &[R], eps: R) -> Option<Vec<R>> {
        let at = self.transpose();
        let mut ata = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                ata[(i, j)] = (0..self.n).map(|k| at[(i, k)] * self[(k, j)]).sum();
            }
            ata[(i, i)] += eps;
        }
        ata.solve(&at.mul_vec(b))
    }
}

impl<R> std::ops::Index<(usize, usize)> for Matrix<R> {
    type Output = R;
    fn index(&self, (i, j): (usize, usize)) -> &R {
        &self.data[i * self.n + j]
    }
}

impl<R> std::ops::IndexMut<(usize, usize)> for Matrix<R> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut R {
        &mut self.data[i * self.n + j]
    }
}
