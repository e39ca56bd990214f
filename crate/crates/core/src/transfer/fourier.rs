//! Trapezoid integration over the frequency variable with octave-wise truncation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiOptions {
    /// Trapezoid spacing in `xi`.
    pub step: f64,
    /// Largest `|xi|` tried before giving up on tail decay.
    pub limit: f64,
    /// An octave whose contribution to `(1/2 pi) int` is below this ends the sweep.
    pub tail_tol: f64,
}

impl Default for XiOptions {
    fn default() -> Self {
        Self { step: 0.2, limit: 64.0, tail_tol: 1e-9 }
    }
}

/// Integrals `int v_k(xi) d xi` over `[-limit, limit]`.
#[derive(Debug, Clone, PartialEq)]
pub struct XiIntegral {
    pub values: Vec<Complex64>,
    pub limit: f64,
    pub evaluations: usize,
}

/// Octave upper edges: 1, 2, 4, ... up to `limit`.
fn octave_edges(limit: f64) -> Vec<f64> {
    let mut edges = vec![1.0];
    while *edges.last().unwrap() * 2.0 <= limit + 1e-12 {
        edges.push(edges.last().unwrap() * 2.0);
    }
    edges
}

/// Integrates every component of `eval` on the symmetric grid `k * step`.
///
/// With `fixed_limit` the sweep runs exactly to that edge, which keeps the
/// quadrature identical across nearby parameter values. Otherwise octaves
/// are added until one contributes less than `tail_tol` (relative to the
/// running total when that exceeds one) for every component.
pub fn integrate<F>(opts: &XiOptions, eval: F, fixed_limit: Option<f64>) -> Result<XiIntegral>
where
    F: Fn(f64) -> Result<Vec<Complex64>> + Sync + Send,
{
    if !(opts.step > 0.0 && opts.limit >= 1.0) {
        return Err(Error::InvalidConfig(format!("bad xi grid: step {} limit {}", opts.step, opts.limit)));
    }
    let limit = fixed_limit.unwrap_or(opts.limit);
    let edges = octave_edges(limit);
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut totals: Vec<Complex64> = Vec::new();
    let mut k_done: i64 = -1;
    let mut evaluations = 0;
    let mut last_contribution = f64::INFINITY;
    for (octave, &edge) in edges.iter().enumerate() {
        let k_hi = (edge / opts.step + 1e-9).floor() as i64;
        let mut xis = Vec::new();
        for k in (k_done + 1)..=k_hi {
            if k == 0 {
                xis.push(0.0);
            } else {
                xis.push(-(k as f64) * opts.step);
                xis.push(k as f64 * opts.step);
            }
        }
        k_done = k_hi;
        let results = crate::par::map(&xis, |&xi| eval(xi));
        evaluations += xis.len();
        let mut contrib: Vec<Complex64> = Vec::new();
        for r in results {
            let v = r?;
            if contrib.is_empty() {
                contrib = vec![Complex64::new(0.0, 0.0); v.len()];
            }
            for (c, x) in contrib.iter_mut().zip(v) {
                *c += x * opts.step;
            }
        }
        if totals.is_empty() {
            totals = vec![Complex64::new(0.0, 0.0); contrib.len()];
        }
        for (t, c) in totals.iter_mut().zip(&contrib) {
            *t += c;
        }
        last_contribution = contrib
            .iter()
            .zip(&totals)
            .map(|(c, t)| c.norm() / two_pi / (t.norm() / two_pi).max(1.0))
            .fold(0.0, f64::max);
        if fixed_limit.is_none() && octave > 0 && last_contribution < opts.tail_tol {
            return Ok(XiIntegral { values: totals, limit: edge, evaluations });
        }
    }
    if fixed_limit.is_some() {
        return Ok(XiIntegral { values: totals, limit: *edges.last().unwrap(), evaluations });
    }
    Err(Error::TailNotDecaying { xi: *edges.last().unwrap(), contribution: last_contribution })
}
