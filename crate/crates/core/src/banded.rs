//! Symmetric positive-definite banded matrices and their Cholesky factors.

#![allow(clippy::needless_range_loop)]

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetric banded matrix stored by lower diagonals.
///
/// `lower[i][k]` holds `A[i][i-k]` for `k = 0..=bandwidth` (entries with
/// `i < k` are unused and kept at zero).
#[derive(Debug, Clone, PartialEq)]
pub struct SymBanded {
    n: usize,
    bandwidth: usize,
    lower: Vec<Vec<f64>>,
}

impl SymBanded {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self { n, bandwidth, lower: vec![vec![0.0; bandwidth + 1]; n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        if k > self.bandwidth {
            0.0
        } else {
            self.lower[hi][k]
        }
    }

    /// Sets `A[i][j] = A[j][i] = value`. Panics outside the band.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        assert!(k <= self.bandwidth, "entry ({i}, {j}) outside bandwidth {}", self.bandwidth);
        self.lower[hi][k] = value;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bandwidth);
            let hi = (i + self.bandwidth).min(self.n - 1);
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += self.get(i, j) * x[j];
            }
            y[i] = acc;
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }

    pub fn cholesky(&self) -> Result<BandedCholesky> {
        BandedCholesky::factor(self)
    }
}

/// Lower-triangular banded factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bandwidth: usize,
    /// `l[i][k] = L[i][i-k]`.
    l: Vec<Vec<f64>>,
}

impl BandedCholesky {
    pub fn factor(a: &SymBanded) -> Result<Self> {
        let n = a.n;
        let w = a.bandwidth;
        let mut l = vec![vec![0.0; w + 1]; n];
        for i in 0..n {
            let lo = i.saturating_sub(w);
            for j in lo..=i {
                // L[i][j] = (A[i][j] - sum_{k<j} L[i][k] L[j][k]) / L[j][j]
                let mut s = a.get(i, j);
                let kmin = lo.max(j.saturating_sub(w));
                for k in kmin..j {
                    s -= l[i][i - k] * l[j][j - k];
                }
                if i == j {
                    if !s.is_finite() || s <= 0.0 {
                        return Err(Error::Internal(format!(
                            "matrix is not positive definite (pivot {s} at row {i})"
                        )));
                    }
                    l[i][0] = s.sqrt();
                } else {
                    l[i][i - j] = s / l[j][0];
                }
            }
        }
        Ok(Self { n, bandwidth: w, l })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.iter().map(|row| row[0].ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        let w = self.bandwidth;
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(w)..i {
                s -= self.l[i][i - k] * x[k];
            }
            x[i] = s / self.l[i][0];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..=(i + w).min(n - 1) {
                s -= self.l[k][k - i] * x[k];
            }
            x[i] = s / self.l[i][0];
        }
    }

    /// Dense inverse, column by column. Columns are independent solves.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.n;
        let cols = crate::par::map_range(n, |j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            self.solve_in_place(&mut e);
            e
        });
        // Symmetrize against round-off so downstream identities are exact.
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = 0.5 * (cols[j][i] + cols[i][j]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }
}
