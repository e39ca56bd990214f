//! Gauss-Hermite grids for the single-spin integral.

use crate::error::{Error, Result};

/// Quadrature rule for Lebesgue integrals `int h(z) dz` on a fixed node set.
///
/// Built from the Gauss-Hermite rule for the weight `exp(-t^2/2)` with nodes
/// mapped through `z = center + scale * t`. Weights are kept as logarithms so
/// that the extreme nodes of large rules do not underflow.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    log_weights: Vec<f64>,
    center: f64,
    scale: f64,
}

impl QuadratureGrid {
    pub fn gauss_hermite(q: usize, center: f64, scale: f64) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidConfig(format!("quadrature needs at least 2 nodes, got {q}")));
        }
        if !(scale.is_finite() && scale > 0.0) || !center.is_finite() {
            return Err(Error::InvalidConfig(format!("bad grid center/scale {center}/{scale}")));
        }
        let (x, lw) = physicists_rule(q)?;
        let sqrt2 = std::f64::consts::SQRT_2;
        let mut nodes = Vec::with_capacity(q);
        let mut log_weights = Vec::with_capacity(q);
        for (xi, lwi) in x.iter().zip(&lw) {
            let t = sqrt2 * xi;
            nodes.push(center + scale * t);
            // int h dz = s int h(c + s t) e^{t^2/2} e^{-t^2/2} dt
            log_weights.push(scale.ln() + lwi + sqrt2.ln() + 0.5 * t * t);
        }
        Ok(Self { nodes, log_weights, center, scale })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Logarithms of the Lebesgue weights.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Weights for `int h(z) exp(-z^2/2) dz`, i.e. `omega_q * exp(-z_q^2/2)`.
    pub fn gaussian_weights(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .zip(&self.log_weights)
            .map(|(z, lw)| (lw - 0.5 * z * z).exp())
            .collect()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, h: F) -> f64 {
        self.nodes.iter().zip(&self.log_weights).map(|(&z, lw)| lw.exp() * h(z)).sum()
    }
}

/// Nodes and log-weights of the rule for `int f(x) exp(-x^2) dx`, ascending.
///
/// Newton iteration on orthonormal Hermite recurrences with the classical
/// asymptotic starting guesses. The weight `2 / p'(x)^2` is formed from the
/// recurrence directly and so keeps full relative precision in the tails.
fn physicists_rule(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    const EPS: f64 = 1e-15;
    const MAX_ITER: usize = 100;
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut lw = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..MAX_ITER {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= EPS * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence { iterations: MAX_ITER, residual: z });
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        let l = std::f64::consts::LN_2 - 2.0 * pp.abs().ln();
        lw[i] = l;
        lw[n - 1 - i] = l;
    }
    if n % 2 == 1 {
        x[m - 1] = 0.0;
    }
    x.reverse();
    lw.reverse();
    Ok((x, lw))
}
