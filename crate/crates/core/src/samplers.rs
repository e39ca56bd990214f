//! Exact MCMC for both ensembles.
//!
//! The grand-canonical chain uses single-site heat-bath updates; the
//! canonical chain moves mass between random pairs of sites so the total spin
//! never changes. Both draw from the exact one-dimensional conditionals by
//! rejection from a Gaussian proposal, which is possible because the
//! perturbation is bounded.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianModel;
use crate::model::{conditional_center, ModelSpec, Potential};

/// Tolerance on the constraint of every retained canonical row.
pub const CE_ROW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub seed: u64,
    pub sweeps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub chain_id: u64,
}

impl ChainConfig {
    pub fn new(seed: u64, sweeps: usize, burn_in: usize) -> Self {
        Self { seed, sweeps, burn_in, thinning: 1, chain_id: 0 }
    }

    pub fn with_chain(self, chain_id: u64) -> Self {
        Self { chain_id, ..self }
    }

    pub fn with_thinning(self, thinning: usize) -> Self {
        Self { thinning, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweeps == 0 || self.sweeps < self.burn_in {
            return Err(Error::InvalidConfig(format!(
                "need sweeps >= burn_in and sweeps > 0 (sweeps {}, burn_in {})",
                self.sweeps, self.burn_in
            )));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidConfig("thinning must be at least 1".into()));
        }
        Ok(())
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.chain_id);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ensemble", rename_all = "snake_case")]
pub enum Ensemble {
    Gce { sigma: f64 },
    Ce { m: f64 },
}

/// Retained configurations of one chain plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub ensemble: Ensemble,
    pub n: usize,
    pub model_hash: String,
    pub config: ChainConfig,
    /// Row-major retained configurations.
    pub data: Vec<f64>,
    pub proposals: u64,
    pub acceptances: u64,
    /// Largest `|mean - m|` seen before re-pinning (canonical chains).
    pub max_drift: f64,
}

impl SampleBatch {
    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.n).unwrap_or(0)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n..(r + 1) * self.n]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n.max(1))
    }

    /// Scalar observable evaluated on every retained row.
    pub fn series<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        self.iter_rows().map(f).collect()
    }

    pub fn site_series(&self, i: usize) -> Vec<f64> {
        self.series(|x| x[i])
    }

    pub fn mean_spin_series(&self) -> Vec<f64> {
        self.series(|x| x.iter().sum::<f64>() / x.len() as f64)
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            1.0
        } else {
            self.acceptances as f64 / self.proposals as f64
        }
    }

    /// Largest constraint violation over retained rows (canonical batches).
    pub fn max_constraint_violation(&self) -> Option<f64> {
        match self.ensemble {
            Ensemble::Ce { m } => Some(self.mean_spin_series().iter().map(|v| (v - m).abs()).fold(0.0, f64::max)),
            Ensemble::Gce { .. } => None,
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        let (kind, value) = match self.ensemble {
            Ensemble::Gce { sigma } => ("gce", sigma),
            Ensemble::Ce { m } => ("ce", m),
        };
        let c = &self.config;
        let _ = writeln!(s, "# canon-lattice sample batch");
        let _ = writeln!(s, "# model_hash={}", self.model_hash);
        let _ = writeln!(s, "# ensemble={kind}");
        let _ = writeln!(s, "# parameter={value:.16e}");
        let _ = writeln!(s, "# seed={}", c.seed);
        let _ = writeln!(s, "# chain_id={}", c.chain_id);
        let _ = writeln!(s, "# sweeps={}", c.sweeps);
        let _ = writeln!(s, "# burn_in={}", c.burn_in);
        let _ = writeln!(s, "# thinning={}", c.thinning);
        let _ = writeln!(s, "# proposals={}", self.proposals);
        let _ = writeln!(s, "# acceptances={}", self.acceptances);
        let _ = writeln!(s, "# max_drift={:.16e}", self.max_drift);
        let header: Vec<String> = (0..self.n).map(|i| format!("x{i}")).collect();
        let _ = writeln!(s, "{}", header.join(","));
        for row in self.iter_rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let mut meta = std::collections::HashMap::new();
        let mut n = None;
        let mut data = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            if let Some(rest) = line.strip_prefix("# ") {
                if let Some((k, v)) = rest.split_once('=') {
                    meta.insert(k.to_string(), v.to_string());
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if n.is_none() {
                n = Some(line.split(',').count());
                continue;
            }
            for cell in line.split(',') {
                data.push(cell.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{cell}: {e}")))?);
            }
        }
        let get = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::Parse(format!("missing header {k}")));
        let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|e| Error::Parse(format!("{k}: {e}"))) };
        let fnum = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|e| Error::Parse(format!("{k}: {e}"))) };
        let value = fnum("parameter")?;
        let ensemble = match get("ensemble")?.as_str() {
            "gce" => Ensemble::Gce { sigma: value },
            "ce" => Ensemble::Ce { m: value },
            other => return Err(Error::Parse(format!("unknown ensemble {other}"))),
        };
        let n = n.ok_or_else(|| Error::Parse("missing column header".into()))?;
        if data.len() % n != 0 {
            return Err(Error::Parse("ragged sample rows".into()));
        }
        Ok(Self {
            ensemble,
            n,
            model_hash: get("model_hash")?,
            config: ChainConfig {
                seed: num("seed")?,
                sweeps: num("sweeps")? as usize,
                burn_in: num("burn_in")? as usize,
                thinning: num("thinning")? as usize,
                chain_id: num("chain_id")?,
            },
            data,
            proposals: num("proposals")?,
            acceptances: num("acceptances")?,
            max_drift: fnum("max_drift")?,
        })
    }
}

/// One exact draw from density `∝ exp(-(z - b)^2 / (2 s^2) - psi_b(z))`
/// given `sup = |psi_b|_inf`. Returns the draw and the number of proposals.
pub fn rejection_draw<R: Rng>(rng: &mut R, center: f64, sd: f64, potential: &Potential, sup: f64) -> (f64, u64) {
    let mut tries = 0;
    loop {
        tries += 1;
        let g: f64 = rng.sample(StandardNormal);
        let z = center + sd * g;
        if sup == 0.0 {
            return (z, tries);
        }
        let u: f64 = rng.random();
        if u < (-potential.value(z) - sup).exp() {
            return (z, tries);
        }
    }
}

/// Probability that one proposal of [`rejection_draw`] is accepted.
pub fn acceptance_probability(center: f64, sd: f64, potential: &Potential, sup: f64) -> f64 {
    // Gauss-Hermite in the standardized proposal variable.
    let grid = crate::transfer::QuadratureGrid::gauss_hermite(80, 0.0, 1.0).expect("valid grid");
    let norm = (2.0 * std::f64::consts::PI).sqrt();
    grid.nodes()
        .iter()
        .zip(grid.gaussian_weights())
        .map(|(&t, w)| w * (-potential.value(center + sd * t) - sup).exp())
        .sum::<f64>()
        / norm
}

struct Counters {
    proposals: u64,
    acceptances: u64,
}

fn gce_sweep(x: &mut [f64], order: &mut [usize], model: &ModelSpec, sigma: f64, sup: f64, rng: &mut ChaCha8Rng, c: &mut Counters) {
    order.shuffle(rng);
    let potential = *model.potential();
    for &i in order.iter() {
        let b = conditional_center(i, x, model, sigma);
        let (z, tries) = rejection_draw(rng, b, 1.0, &potential, sup);
        x[i] = z;
        c.proposals += tries;
        c.acceptances += 1;
    }
}

/// `(P x + s~)_i`, the quadratic part of the energy gradient.
fn linear_force(i: usize, x: &[f64], model: &ModelSpec) -> f64 {
    let pair: f64 = model.neighbours(i).iter().map(|&(j, c)| c * x[j]).sum();
    x[i] + model.effective_field()[i] + pair
}

fn ce_sweep(x: &mut [f64], model: &ModelSpec, sup: f64, rng: &mut ChaCha8Rng, c: &mut Counters) {
    let n = x.len();
    if n < 2 {
        return;
    }
    let potential = *model.potential();
    for _ in 0..n {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        // x_i = a + t, x_j = b - t: quadratic energy kappa t^2 / 2 + g t
        let kappa = 2.0 * (1.0 - model.coupling(i, j));
        let g = linear_force(i, x, model) - linear_force(j, x, model);
        let (a, b) = (x[i], x[j]);
        let center = -g / kappa;
        let sd = kappa.powf(-0.5);
        loop {
            let z: f64 = rng.sample(StandardNormal);
            let t = center + sd * z;
            c.proposals += 1;
            if sup == 0.0 || rng.random::<f64>() < (-potential.value(a + t) - potential.value(b - t) - 2.0 * sup).exp() {
                x[i] = a + t;
                x[j] = b - t;
                c.acceptances += 1;
                break;
            }
        }
    }
}

fn retain(sweep: usize, cfg: &ChainConfig) -> bool {
    sweep >= cfg.burn_in && (sweep - cfg.burn_in).is_multiple_of(cfg.thinning)
}

/// Grand-canonical chain at tilt `sigma`.
pub fn run_gce_chain(model: &ModelSpec, sigma: f64, cfg: &ChainConfig) -> Result<SampleBatch> {
    cfg.validate()?;
    let n = model.n();
    let mut rng = cfg.rng();
    let mut x = GaussianModel::quadratic_part(model)?.mean(sigma);
    let mut order: Vec<usize> = (0..n).collect();
    let sup = model.potential().sup_norms().value;
    let mut counters = Counters { proposals: 0, acceptances: 0 };
    let mut data = Vec::with_capacity((cfg.sweeps - cfg.burn_in) / cfg.thinning * n + n);
    for sweep in 0..cfg.sweeps {
        gce_sweep(&mut x, &mut order, model, sigma, sup, &mut rng, &mut counters);
        if retain(sweep, cfg) {
            data.extend_from_slice(&x);
        }
    }
    Ok(SampleBatch {
        ensemble: Ensemble::Gce { sigma },
        n,
        model_hash: model.hash(),
        config: *cfg,
        data,
        proposals: counters.proposals,
        acceptances: counters.acceptances,
        max_drift: 0.0,
    })
}

/// Canonical chain at mean spin `m`, started from the constant configuration.
pub fn run_ce_chain(model: &ModelSpec, m: f64, cfg: &ChainConfig) -> Result<SampleBatch> {
    cfg.validate()?;
    let n = model.n();
    let mut rng = cfg.rng();
    let mut x = vec![m; n];
    let sup = model.potential().sup_norms().value;
    let mut counters = Counters { proposals: 0, acceptances: 0 };
    let mut data = Vec::with_capacity((cfg.sweeps - cfg.burn_in) / cfg.thinning * n + n);
    let mut max_drift: f64 = 0.0;
    for sweep in 0..cfg.sweeps {
        ce_sweep(&mut x, model, sup, &mut rng, &mut counters);
        let drift = x.iter().sum::<f64>() / n as f64 - m;
        max_drift = max_drift.max(drift.abs());
        for v in x.iter_mut() {
            *v -= drift;
        }
        if retain(sweep, cfg) {
            data.extend_from_slice(&x);
        }
    }
    Ok(SampleBatch {
        ensemble: Ensemble::Ce { m },
        n,
        model_hash: model.hash(),
        config: *cfg,
        data,
        proposals: counters.proposals,
        acceptances: counters.acceptances,
        max_drift,
    })
}

/// Independent chains `0..chains` on separate streams, ordered by chain id.
pub fn run_chains(model: &ModelSpec, ensemble: Ensemble, cfg: &ChainConfig, chains: usize) -> Result<Vec<SampleBatch>> {
    let base = cfg.chain_id * chains as u64;
    crate::par::map_range(chains, |c| {
        let cfg = cfg.with_chain(base + c as u64);
        match ensemble {
            Ensemble::Gce { sigma } => run_gce_chain(model, sigma, &cfg),
            Ensemble::Ce { m } => run_ce_chain(model, m, &cfg),
        }
    })
    .into_iter()
    .collect()
}

/// Canonical chains for two models differing only in their boundary values.
///
/// Both use the seed of `cfg`; the first runs on stream `2 * chain_id`, the
/// second on `2 * chain_id + 1`.
pub fn two_boundary_ce_pair(y: &ModelSpec, z: &ModelSpec, m: f64, cfg: &ChainConfig) -> Result<(SampleBatch, SampleBatch)> {
    if !y.same_except_boundary(z) {
        return Err(Error::ModelMismatch("the two models must agree in everything but boundary values".into()));
    }
    let cy = cfg.with_chain(2 * cfg.chain_id);
    let cz = cfg.with_chain(2 * cfg.chain_id + 1);
    let (a, b) = crate::par::join(|| run_ce_chain(y, m, &cy), || run_ce_chain(z, m, &cz));
    Ok((a?, b?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(n: usize) -> ModelSpec {
        ModelSpec::translation_invariant(Potential::Zero, &[0.0], 0.5, n).unwrap()
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn same_seed_same_batch() {
        let m = ModelSpec::translation_invariant(Potential::Cosine { beta: 1.0, omega: 1.0 }, &[-0.15, -0.1], 0.5, 10).unwrap();
        let cfg = ChainConfig::new(7, 200, 20);
        assert_eq!(run_gce_chain(&m, 0.2, &cfg).unwrap(), run_gce_chain(&m, 0.2, &cfg).unwrap());
        assert_eq!(run_ce_chain(&m, 0.3, &cfg).unwrap(), run_ce_chain(&m, 0.3, &cfg).unwrap());
        assert_ne!(run_gce_chain(&m, 0.2, &cfg).unwrap().data, run_gce_chain(&m, 0.2, &cfg.with_chain(1)).unwrap().data);
    }

    #[test]
    fn canonical_constraint_holds() {
        let m = ModelSpec::translation_invariant(Potential::Cosine { beta: 1.0, omega: 1.0 }, &[-0.15, -0.1], 0.5, 64).unwrap();
        let b = run_ce_chain(&m, 0.7, &ChainConfig::new(3, 300, 0)).unwrap();
        assert!(b.max_constraint_violation().unwrap() <= CE_ROW_TOLERANCE);
        assert!(b.max_drift <= 1e-11);
    }

    #[test]
    fn identity_gce_mean() {
        let b = run_gce_chain(&identity(32), 1.3, &ChainConfig::new(11, 4000, 100)).unwrap();
        let series = b.mean_spin_series();
        // iid sites, so the per-row mean has variance 1/32.
        let se = (1.0 / 32.0 / series.len() as f64).sqrt();
        assert!((mean(&series) - 1.3).abs() < 4.0 * se);
    }

    #[test]
    fn cosine_acceptance_rate_exceeds_bound() {
        let m = ModelSpec::translation_invariant(Potential::Cosine { beta: 1.0, omega: 1.0 }, &[-0.15, -0.1], 0.5, 16).unwrap();
        let b = run_gce_chain(&m, 0.0, &ChainConfig::new(5, 500, 0)).unwrap();
        assert!(b.acceptance_rate() >= (-2.0f64).exp());
    }

    #[test]
    fn exchangeable_ce_covariance() {
        let b = run_ce_chain(&identity(16), 0.0, &ChainConfig::new(9, 20000, 200)).unwrap();
        let x0 = b.site_series(0);
        let x1 = b.site_series(1);
        let (m0, m1) = (mean(&x0), mean(&x1));
        let cov = x0.iter().zip(&x1).map(|(a, c)| (a - m0) * (c - m1)).sum::<f64>() / x0.len() as f64;
        assert!((cov + 0.0625).abs() < 0.02, "{cov}");
    }

    #[test]
    fn csv_round_trip() {
        let m = identity(4);
        let b = run_ce_chain(&m, 0.25, &ChainConfig::new(1, 30, 5).with_thinning(5)).unwrap();
        assert_eq!(b.rows(), 5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        b.write_csv(&p).unwrap();
        let back = SampleBatch::read_csv(&p).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn pair_requires_matching_models() {
        let y = identity(5);
        let z = y.with_boundary(vec![2.0], vec![2.0]).unwrap();
        assert!(two_boundary_ce_pair(&y, &z, 0.0, &ChainConfig::new(1, 10, 0)).is_ok());
        let w = identity(6);
        assert!(matches!(two_boundary_ce_pair(&y, &w, 0.0, &ChainConfig::new(1, 10, 0)), Err(Error::ModelMismatch(_))));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(run_gce_chain(&identity(3), 0.0, &ChainConfig::new(1, 5, 10)).is_err());
        assert!(run_gce_chain(&identity(3), 0.0, &ChainConfig::new(1, 5, 0).with_thinning(0)).is_err());
    }

    #[test]
    fn acceptance_prediction_for_zero_potential() {
        assert!((acceptance_probability(0.3, 1.0, &Potential::Zero, 0.0) - 1.0).abs() < 1e-12);
        let p = Potential::Cosine { beta: 1.0, omega: 1.0 };
        let a = acceptance_probability(0.0, 1.0, &p, 1.0);
        // E[exp(-cos Z - 1)] for a standard normal Z, by direct quadrature.
        let mut direct = 0.0;
        let h = 1e-3;
        for k in -10000..=10000 {
            let z = k as f64 * h;
            direct += h * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() * (-z.cos() - 1.0).exp();
        }
        assert!((a - direct).abs() < 1e-10);
    }
}
