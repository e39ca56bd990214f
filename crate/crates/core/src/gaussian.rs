//! Closed-form Gaussian reference for models without a perturbation.
//!
//! With `psi_b = 0` the grand-canonical density is a Gaussian with precision
//! `P` (unit diagonal, off-diagonal couplings) and linear term `b = sigma - s~`.
//! The canonical ensemble is that Gaussian conditioned on `1^T x = N m`.

use nalgebra::DMatrix;

use crate::banded::{BandedCholesky, SymBanded};
use crate::error::{Error, Result};
use crate::model::ModelSpec;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mean and covariance of one ensemble.
#[derive(Debug, Clone)]
pub struct GaussianMoments {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn mean_spin(&self) -> f64 {
        self.mean.iter().sum::<f64>() / self.mean.len() as f64
    }

    /// Largest absolute row sum of the covariance.
    pub fn max_row_sum(&self) -> f64 {
        (0..self.cov.nrows())
            .map(|i| self.cov.row(i).sum().abs())
            .fold(0.0, f64::max)
    }
}

/// Gaussian specialization of a [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct GaussianModel {
    n: usize,
    precision: SymBanded,
    chol: BandedCholesky,
    field: Vec<f64>,
    /// `P^{-1} 1`, the row sums of the covariance.
    u: Vec<f64>,
    /// `P^{-1} s~`
    w: Vec<f64>,
    ones_u: f64,
    ones_w: f64,
}

impl GaussianModel {
    pub fn new(model: &ModelSpec) -> Result<Self> {
        if !model.potential().is_zero() {
            return Err(Error::RequiresGaussian);
        }
        Self::quadratic_part(model)
    }

    /// Gaussian built from the quadratic part of any model, ignoring the perturbation.
    pub fn quadratic_part(model: &ModelSpec) -> Result<Self> {
        let n = model.n();
        let r = model.range().min(n.saturating_sub(1));
        let mut precision = SymBanded::zeros(n, r);
        for i in 0..n {
            precision.set(i, i, 1.0);
            for &(j, c) in model.neighbours(i) {
                if j > i {
                    precision.set(i, j, c);
                }
            }
        }
        let chol = precision
            .cholesky()
            .map_err(|e| Error::Internal(format!("positive definiteness lost despite dominance: {e}")))?;
        let field = model.effective_field().to_vec();
        let u = chol.solve(&vec![1.0; n]);
        let w = chol.solve(&field);
        let ones_u = u.iter().sum();
        let ones_w = w.iter().sum();
        Ok(Self { n, precision, chol, field, u, w, ones_u, ones_w })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn precision(&self) -> &SymBanded {
        &self.precision
    }

    /// `b = sigma 1 - s~`
    pub fn linear_term(&self, sigma: f64) -> Vec<f64> {
        self.field.iter().map(|s| sigma - s).collect()
    }

    /// `mu(sigma) = P^{-1} b = sigma u - w`, without a fresh solve.
    pub fn mean(&self, sigma: f64) -> Vec<f64> {
        self.u.iter().zip(&self.w).map(|(u, w)| sigma * u - w).collect()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn gce_moments(&self, sigma: f64) -> GaussianMoments {
        GaussianMoments { mean: self.chol.solve(&self.linear_term(sigma)), cov: self.covariance() }
    }

    /// Canonical moments at mean spin `m`. The grand-canonical mean is taken at `sigma(m)`,
    /// although the result does not depend on that choice.
    pub fn ce_moments(&self, m: f64) -> GaussianMoments {
        let gce = self.gce_moments(self.sigma_of_m(m));
        self.condition(&gce, m)
    }

    /// Rank-one conditioning of `gce` on `1^T x = N m`.
    pub fn condition(&self, gce: &GaussianMoments, m: f64) -> GaussianMoments {
        let n = self.n;
        let shift = (n as f64 * m - gce.mean.iter().sum::<f64>()) / self.ones_u;
        let mean = gce.mean.iter().zip(&self.u).map(|(mu, u)| mu + u * shift).collect();
        let mut cov = gce.cov.clone();
        for i in 0..n {
            for j in 0..n {
                cov[(i, j)] -= self.u[i] * self.u[j] / self.ones_u;
            }
        }
        GaussianMoments { mean, cov }
    }

    /// Canonical covariance computed by projecting onto the hyperplane
    /// `1^T x = 0` with a Helmert basis `V` and inverting `V^T P V` densely.
    /// Independent of the rank-one formula used by [`condition`](Self::condition).
    pub fn ce_covariance_projected(&self) -> Result<DMatrix<f64>> {
        let n = self.n;
        if n < 2 {
            return Ok(DMatrix::zeros(n, n));
        }
        let mut v = DMatrix::zeros(n, n - 1);
        for k in 1..n {
            let norm = ((k * (k + 1)) as f64).sqrt();
            for i in 0..k {
                v[(i, k - 1)] = 1.0 / norm;
            }
            v[(k, k - 1)] = -(k as f64) / norm;
        }
        let p = DMatrix::from_fn(n, n, |i, j| self.precision.get(i, j));
        let reduced = v.transpose() * &p * &v;
        let inv = reduced
            .cholesky()
            .ok_or_else(|| Error::Internal("projected precision is not positive definite".into()))?
            .inverse();
        Ok(&v * inv * v.transpose())
    }

    /// Mean spin `(1/N) 1^T mu(sigma)`.
    pub fn mean_spin(&self, sigma: f64) -> f64 {
        (sigma * self.ones_u - self.ones_w) / self.n as f64
    }

    /// `v = (1/N) 1^T Sigma 1 = d^2 A_gce / d sigma^2`, constant in sigma.
    pub fn total_variance(&self) -> f64 {
        self.ones_u / self.n as f64
    }

    /// `Sigma 1`
    pub fn row_sums(&self) -> &[f64] {
        &self.u
    }

    /// Solves `(1/N) 1^T mu(sigma) = m` exactly.
    pub fn sigma_of_m(&self, m: f64) -> f64 {
        (self.n as f64 * m + self.ones_w) / self.ones_u
    }

    /// `A_gce(sigma) = (1/N)[b^T P^{-1} b / 2 + ln((2 pi)^N / det P) / 2]`
    pub fn free_energy_gce(&self, sigma: f64) -> f64 {
        let b = self.linear_term(sigma);
        let mu = self.mean(sigma);
        let quad: f64 = b.iter().zip(&mu).map(|(b, m)| b * m).sum();
        let n = self.n as f64;
        (0.5 * quad + 0.5 * (n * LN_2PI - self.chol.log_det())) / n
    }

    /// Density at 0 of `N^{-1/2} sum (X_k - m)` under the gce at `sigma`,
    /// with `m` the gce mean spin at `sigma`.
    pub fn density_at_zero(&self) -> f64 {
        (2.0 * std::f64::consts::PI * self.total_variance()).powf(-0.5)
    }

    /// `A_ce = A_gce + (1/N) ln g(0)` at the mean spin matched to `sigma`.
    pub fn free_energy_ce(&self, sigma: f64) -> f64 {
        self.free_energy_gce(sigma) + self.density_at_zero().ln() / self.n as f64
    }
}
