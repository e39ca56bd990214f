//! Matching the external field to a prescribed mean spin.

use serde::{Deserialize, Serialize};

use super::stats::{mean, mean_with_error};
use crate::error::{Error, Result};
use crate::gaussian::GaussianModel;
use crate::model::ModelSpec;
use crate::samplers::{run_chains, ChainConfig, Ensemble};
use crate::transfer::{TransferEngine, TransferOptions};

/// Mean spin and its sigma-derivative at one value of the tilt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinResponse {
    /// `dA/d sigma`
    pub mean_spin: f64,
    /// `d^2A/d sigma^2 = (1/N) var(sum X)`
    pub second_derivative: f64,
    /// Standard error of `mean_spin`; zero for deterministic engines.
    pub standard_error: f64,
}

/// Anything that can evaluate the mean spin as a function of sigma.
pub trait MeanSpinEngine {
    fn response(&self, sigma: f64) -> Result<SpinResponse>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub tolerance: f64,
    /// Accept `|mean - m| <= se_factor * standard_error` for stochastic engines.
    pub se_factor: f64,
    pub max_iterations: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, se_factor: 2.0, max_iterations: 100 }
    }
}

/// Newton iteration on `meanSpin(sigma) = m`, safeguarded by bisection.
///
/// The mean spin is increasing in sigma, so every evaluation tightens a
/// bracket around the root; steps that leave the bracket are replaced by its
/// midpoint.
pub fn solve<E: MeanSpinEngine + ?Sized>(engine: &E, m: f64, start: f64, opts: &NewtonOptions) -> Result<f64> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut sigma = start;
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let r = engine.response(sigma)?;
        residual = r.mean_spin - m;
        let tol = opts.tolerance.max(opts.se_factor * r.standard_error);
        if residual.abs() <= tol {
            return Ok(sigma);
        }
        if residual < 0.0 {
            lo = lo.max(sigma);
        } else {
            hi = hi.min(sigma);
        }
        let slope = r.second_derivative;
        let mut next = if slope > 0.0 && slope.is_finite() { sigma - residual / slope } else { f64::NAN };
        let inside = next.is_finite() && next > lo && next < hi;
        if !inside {
            next = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + 1.0_f64.max((lo - start).abs()),
                (false, true) => hi - 1.0_f64.max((hi - start).abs()),
                (false, false) => sigma - residual.signum(),
            };
        }
        if lo.is_finite() && hi.is_finite() && hi - lo < 1e-15 * (1.0 + sigma.abs()) {
            return Err(Error::NoConvergence { iterations: opts.max_iterations, residual });
        }
        sigma = next;
    }
    Err(Error::NoConvergence { iterations: opts.max_iterations, residual })
}

/// Grand-canonical sampling as a stochastic mean-spin engine.
///
/// Every evaluation reuses the same seeds, so neighbouring sigmas see common
/// random numbers and the response is smooth enough for Newton steps.
pub struct McmcEngine<'a> {
    pub model: &'a ModelSpec,
    pub chain: ChainConfig,
    pub chains: usize,
}

impl MeanSpinEngine for McmcEngine<'_> {
    fn response(&self, sigma: f64) -> Result<SpinResponse> {
        let batches = run_chains(self.model, Ensemble::Gce { sigma }, &self.chain, self.chains)?;
        let mut means = Vec::new();
        let mut se2 = 0.0;
        let mut pooled = Vec::new();
        for b in &batches {
            let s = b.mean_spin_series();
            let e = mean_with_error(&s)?;
            means.push(e.mean);
            se2 += e.standard_error.powi(2);
            pooled.extend(s);
        }
        let k = batches.len() as f64;
        let mu = mean(&pooled);
        let var = pooled.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (pooled.len() - 1) as f64;
        Ok(SpinResponse {
            mean_spin: mean(&means),
            second_derivative: self.model.n() as f64 * var,
            standard_error: se2.sqrt() / k,
        })
    }
}

/// Which engine evaluates the mean spin.
#[derive(Debug, Clone, PartialEq)]
pub enum EngineChoice {
    Oracle,
    Transfer(TransferOptions),
    Mcmc { chain: ChainConfig, chains: usize },
}

/// `sigma(m)` for any model, each engine starting from the quadratic-part guess.
pub fn sigma_of_m_general(model: &ModelSpec, m: f64, engine: &EngineChoice) -> Result<f64> {
    let guess = GaussianModel::quadratic_part(model)?.sigma_of_m(m);
    match engine {
        EngineChoice::Oracle => Ok(GaussianModel::new(model)?.sigma_of_m(m)),
        EngineChoice::Transfer(opts) => TransferEngine::with_options(model, *opts)?.sigma_of_m(m),
        EngineChoice::Mcmc { chain, chains } => {
            let eng = McmcEngine { model, chain: *chain, chains: *chains };
            solve(&eng, m, guess, &NewtonOptions { max_iterations: 30, ..NewtonOptions::default() })
        }
    }
}
