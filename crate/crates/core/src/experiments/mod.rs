//! Reproducible experiments behind the `canon-lattice` command line.
//!
//! Every command reads a model config (plus an optional `[experiment]` table),
//! evaluates independent cells keyed by window size, and writes CSV tables,
//! `summary.json` and `manifest.json` into the output directory. Cells may
//! run concurrently; assembly is ordered by cell key so outputs are
//! byte-stable.

mod correlation;
mod free_energy;
mod moments;
mod observables;
mod oracle_check;
mod uniqueness;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelSpec, Tilt};
use crate::samplers::ChainConfig;

pub use oracle_check::symmetric_identity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    OracleCheck,
    EquivalenceObservables,
    CorrelationEquivalence,
    FreeEnergy,
    Uniqueness,
    MomentVarianceSuite,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::OracleCheck,
        Experiment::EquivalenceObservables,
        Experiment::CorrelationEquivalence,
        Experiment::FreeEnergy,
        Experiment::Uniqueness,
        Experiment::MomentVarianceSuite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::OracleCheck => "oracle-check",
            Experiment::EquivalenceObservables => "equivalence-observables",
            Experiment::CorrelationEquivalence => "correlation-equivalence",
            Experiment::FreeEnergy => "free-energy",
            Experiment::Uniqueness => "uniqueness",
            Experiment::MomentVarianceSuite => "moment-variance-suite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Oracle,
    Transfer,
    Mcmc,
}

impl EngineKind {
    pub fn name(self) -> &'static str {
        match self {
            EngineKind::Oracle => "oracle",
            EngineKind::Transfer => "transfer",
            EngineKind::Mcmc => "mcmc",
        }
    }

    /// Cheapest engine that can handle `model` exactly.
    pub fn auto(model: &ModelSpec) -> Self {
        if model.potential().is_zero() {
            EngineKind::Oracle
        } else if model.range() == 1 {
            EngineKind::Transfer
        } else {
            EngineKind::Mcmc
        }
    }
}

/// Tolerance bands; every field can be overridden in `[experiment.bands]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bands {
    pub symmetric: f64,
    pub rank_one: f64,
    pub decay_rate_min: f64,
    pub decay_residual: f64,
    /// Plateau ratio across N doubling for exact Gaussian curves.
    pub plateau_ratio: [f64; 2],
    /// Fitted ce plateau ratio across N doubling.
    pub correlation_ratio: [f64; 2],
    pub oracle_free_energy_ratio: [f64; 2],
    pub transfer_free_energy_ratio: [f64; 2],
    pub observable_slope_max: f64,
    /// `|E_gce f - E_ce f|` for linear `f` in the Gaussian case.
    pub linear_gap: f64,
    pub far_covariance: f64,
    pub first_derivative: f64,
    pub second_derivative: f64,
    pub tilt_residual: f64,
    pub variance: [f64; 2],
    pub moment4: [f64; 2],
    pub block4: [f64; 2],
    pub block_doubling_max: f64,
    /// Noise multiple for MCMC trend checks.
    pub se_multiple: f64,
}

impl Default for Bands {
    fn default() -> Self {
        Self {
            symmetric: 1e-12,
            rank_one: 1e-10,
            decay_rate_min: 0.1,
            decay_residual: 1e-2,
            plateau_ratio: [1.8, 2.2],
            correlation_ratio: [1.6, 2.5],
            oracle_free_energy_ratio: [1.8, 2.2],
            transfer_free_energy_ratio: [1.6, 2.4],
            observable_slope_max: -0.4,
            linear_gap: 1e-9,
            far_covariance: 1e-6,
            first_derivative: 1e-5,
            second_derivative: 1e-4,
            tilt_residual: 1e-5,
            variance: [0.1, 10.0],
            moment4: [0.0, 10.0],
            block4: [0.0, 50.0],
            block_doubling_max: 5.0,
            se_multiple: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcSettings {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thinning: usize,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self { sweeps: 20_000, burn_in: 1_000, thinning: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// `(x_mid - m)^3`
    CubedMidpoint,
    Midpoint,
    One,
}

/// The optional `[experiment]` table of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSettings {
    pub n_list: Option<Vec<usize>>,
    pub sigma_grid: Vec<f64>,
    pub r_list: Option<Vec<usize>>,
    /// Distance between the supports in the correlation experiment.
    pub distance: usize,
    pub boundary_value: f64,
    pub block_sizes: Vec<usize>,
    pub observable: Observable,
    pub bands: Bands,
    pub mcmc: McmcSettings,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            n_list: None,
            sigma_grid: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            r_list: None,
            distance: 2,
            boundary_value: 2.0,
            block_sizes: vec![8, 16],
            observable: Observable::CubedMidpoint,
            bands: Bands::default(),
            mcmc: McmcSettings::default(),
        }
    }
}

impl ExperimentSettings {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct File {
            #[serde(default)]
            experiment: ExperimentSettings,
        }
        toml::from_str::<File>(text).map(|f| f.experiment).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// One run request, as given on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub experiment: Experiment,
    pub config_path: PathBuf,
    pub n_list: Option<Vec<usize>>,
    pub engine: Option<EngineKind>,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub bound: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, max: f64) -> Self {
        Self { name: name.into(), passed: value <= max, value, bound: format!("<= {max:e}"), detail: String::new() }
    }

    pub fn at_least(name: impl Into<String>, value: f64, min: f64) -> Self {
        Self { name: name.into(), passed: value >= min, value, bound: format!(">= {min:e}"), detail: String::new() }
    }

    pub fn positive(name: impl Into<String>, value: f64) -> Self {
        Self { name: name.into(), passed: value > 0.0, value, bound: "> 0".into(), detail: String::new() }
    }

    pub fn within(name: impl Into<String>, value: f64, [lo, hi]: [f64; 2]) -> Self {
        Self {
            name: name.into(),
            passed: (lo..=hi).contains(&value),
            value,
            bound: format!("in [{lo}, {hi}]"),
            detail: String::new(),
        }
    }

    pub fn flag(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, value: f64::NAN, bound: "true".into(), detail: detail.into() }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: Experiment,
    pub engine: EngineKind,
    pub n_list: Vec<usize>,
    pub passed: bool,
    pub checks: Vec<Check>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Summary {
    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks plus the CSV files of one experiment.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub files: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

/// Everything a command sees.
pub struct Context {
    pub model: ModelSpec,
    pub settings: ExperimentSettings,
    pub engine: EngineKind,
    pub n_list: Vec<usize>,
    pub seed: u64,
    /// Target mean spin of the canonical ensemble.
    pub m: f64,
}

impl Context {
    pub fn bands(&self) -> &Bands {
        &self.settings.bands
    }

    pub fn sized(&self, n: usize) -> Result<ModelSpec> {
        self.model.with_size(n)
    }

    pub fn chain(&self, key: &str) -> ChainConfig {
        let s = &self.settings.mcmc;
        ChainConfig::new(cell_seed(self.seed, key), s.sweeps, s.burn_in).with_thinning(s.thinning)
    }

    fn require(&self, allowed: &[EngineKind], experiment: Experiment) -> Result<()> {
        if allowed.contains(&self.engine) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "engine {} is not available for {}",
                self.engine.name(),
                experiment.name()
            )))
        }
    }
}

/// Seed of one cell, derived from the plan seed and the cell key.
pub fn cell_seed(seed: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Formats a float with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Compact scientific rendering of a list for check details.
pub fn list(xs: &[f64], digits: usize) -> String {
    let items: Vec<String> = xs.iter().map(|x| format!("{x:.digits$e}")).collect();
    format!("[{}]", items.join(", "))
}

/// CSV with a header, built row by row.
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { text: format!("{}\n", header.join(",")) }
    }

    pub fn row(&mut self, cells: &[String]) {
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    pub fn finish(self) -> String {
        self.text
    }
}

/// `true` when every consecutive pair strictly decreases.
pub fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

/// Ratios `x_k / x_{k+1}` across consecutive list entries where the size doubles.
pub fn doubling_ratios(ns: &[usize], xs: &[f64]) -> Vec<(usize, f64)> {
    ns.windows(2)
        .zip(xs.windows(2))
        .filter(|(n, _)| n[1] == 2 * n[0])
        .map(|(n, x)| (n[0], x[0] / x[1]))
        .collect()
}

fn default_n_list(experiment: Experiment, engine: EngineKind) -> Vec<usize> {
    match (experiment, engine) {
        (Experiment::OracleCheck, _) => vec![32, 64, 128],
        (Experiment::CorrelationEquivalence, EngineKind::Oracle) => vec![32, 64, 128],
        (Experiment::CorrelationEquivalence, _) => vec![16, 32, 64],
        (Experiment::MomentVarianceSuite, _) => vec![8, 16, 32, 64, 128],
        _ => vec![8, 16, 32],
    }
}

/// Result of a run: the summary plus what was written.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: Summary,
    pub manifest: Manifest,
    pub exit_code: i32,
}

/// Written next to every result set; enough to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: Experiment,
    pub config_path: PathBuf,
    pub config: String,
    pub config_sha256: String,
    pub model_hash: String,
    pub seed: u64,
    pub engine: EngineKind,
    pub n_list: Vec<usize>,
    pub engine_versions: BTreeMap<String, String>,
    /// SHA-256 of every CSV output.
    pub outputs: BTreeMap<String, String>,
}

pub fn engine_versions() -> BTreeMap<String, String> {
    let v = env!("CARGO_PKG_VERSION");
    [
        ("canon-lattice", v.to_string()),
        ("gaussian_oracle", format!("{v}+banded-cholesky")),
        ("transfer_engine", format!("{v}+gauss-hermite")),
        ("samplers", format!("{v}+chacha8-exact-rejection")),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Evaluates an experiment without touching the file system.
pub fn evaluate(experiment: Experiment, config_text: &str, n_list: Option<Vec<usize>>, engine: Option<EngineKind>, seed: u64) -> Result<(Context, Outcome)> {
    let model = ModelSpec::from_config(ModelConfig::from_toml_str(config_text)?)?;
    let settings = ExperimentSettings::from_toml_str(config_text)?;
    let engine = engine.unwrap_or_else(|| EngineKind::auto(&model));
    let n_list = n_list
        .or_else(|| settings.n_list.clone())
        .unwrap_or_else(|| default_n_list(experiment, engine));
    if n_list.is_empty() || n_list.iter().any(|&n| n < 4) {
        return Err(Error::InvalidConfig("N list must be non-empty with every N >= 4".into()));
    }
    let m = match model.tilt() {
        Some(Tilt::MeanSpin(m)) => m,
        Some(Tilt::Sigma(_)) => {
            return Err(Error::InvalidConfig("experiments are parameterised by window.mean_spin, not sigma".into()))
        }
        None => 0.0,
    };
    let ctx = Context { model, settings, engine, n_list, seed, m };
    let outcome = match experiment {
        Experiment::OracleCheck => {
            ctx.require(&[EngineKind::Oracle], experiment)?;
            oracle_check::run(&ctx)?
        }
        Experiment::EquivalenceObservables => {
            ctx.require(&[EngineKind::Oracle, EngineKind::Transfer], experiment)?;
            observables::run(&ctx)?
        }
        Experiment::CorrelationEquivalence => {
            ctx.require(&[EngineKind::Oracle, EngineKind::Transfer], experiment)?;
            correlation::run(&ctx)?
        }
        Experiment::FreeEnergy => {
            ctx.require(&[EngineKind::Oracle, EngineKind::Transfer], experiment)?;
            free_energy::run(&ctx)?
        }
        Experiment::Uniqueness => {
            ctx.require(&[EngineKind::Oracle, EngineKind::Mcmc], experiment)?;
            uniqueness::run(&ctx)?
        }
        Experiment::MomentVarianceSuite => {
            ctx.require(&[EngineKind::Oracle, EngineKind::Transfer], experiment)?;
            moments::run(&ctx)?
        }
    };
    Ok((ctx, outcome))
}

/// Runs `plan`, reading the config from its path.
pub fn run(plan: &ExperimentPlan) -> Result<RunReport> {
    match std::fs::read_to_string(&plan.config_path) {
        Ok(text) => run_with_config(plan, &text),
        Err(e) => {
            let e = Error::Io(e);
            std::fs::create_dir_all(&plan.out)?;
            write_error_summary(&plan.out, plan, &e)?;
            Err(e)
        }
    }
}

/// Runs `plan` with the given config text and writes all outputs.
pub fn run_with_config(plan: &ExperimentPlan, config_text: &str) -> Result<RunReport> {
    std::fs::create_dir_all(&plan.out)?;
    let (ctx, outcome) = match evaluate(plan.experiment, config_text, plan.n_list.clone(), plan.engine, plan.seed) {
        Ok(r) => r,
        Err(e) => {
            write_error_summary(&plan.out, plan, &e)?;
            return Err(e);
        }
    };
    let mut outputs = BTreeMap::new();
    for (name, body) in &outcome.files {
        std::fs::write(plan.out.join(name), body)?;
        outputs.insert(name.clone(), sha256_hex(body.as_bytes()));
    }
    let passed = outcome.checks.iter().all(|c| c.passed);
    let summary = Summary {
        experiment: plan.experiment,
        engine: ctx.engine,
        n_list: ctx.n_list.clone(),
        passed,
        checks: outcome.checks,
        notes: outcome.notes,
    };
    write_json(&plan.out.join("summary.json"), &summary)?;
    let manifest = Manifest {
        experiment: plan.experiment,
        config_path: plan.config_path.clone(),
        config: config_text.to_string(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        model_hash: ctx.model.hash(),
        seed: plan.seed,
        engine: ctx.engine,
        n_list: ctx.n_list.clone(),
        engine_versions: engine_versions(),
        outputs,
    };
    write_json(&plan.out.join("manifest.json"), &manifest)?;
    Ok(RunReport { summary, manifest, exit_code: if passed { 0 } else { 2 } })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn write_error_summary(out: &Path, plan: &ExperimentPlan, err: &Error) -> Result<()> {
    let value = serde_json::json!({
        "experiment": plan.experiment,
        "passed": false,
        "error": err.to_string(),
        "configuration_error": err.is_configuration(),
    });
    write_json(&out.join("summary.json"), &value)
}

/// Outcome of replaying a manifest.
#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub run: RunReport,
    /// Files whose bytes differ from the manifest (or are missing).
    pub mismatched: Vec<String>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.mismatched.is_empty()
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
}

/// Reruns the experiment recorded in `manifest` into `out` and compares
/// every CSV with the recorded digests.
pub fn replay(manifest: &Manifest, out: &Path) -> Result<ReplayReport> {
    let plan = ExperimentPlan {
        experiment: manifest.experiment,
        config_path: manifest.config_path.clone(),
        n_list: Some(manifest.n_list.clone()),
        engine: Some(manifest.engine),
        seed: manifest.seed,
        out: out.to_path_buf(),
    };
    let run = run_with_config(&plan, &manifest.config)?;
    let mut mismatched: Vec<String> = manifest
        .outputs
        .iter()
        .filter(|(name, digest)| run.manifest.outputs.get(*name) != Some(*digest))
        .map(|(name, _)| name.clone())
        .collect();
    mismatched.extend(run.manifest.outputs.keys().filter(|k| !manifest.outputs.contains_key(*k)).cloned());
    Ok(ReplayReport { run, mismatched })
}
