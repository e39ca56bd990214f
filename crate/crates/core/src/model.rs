//! Hamiltonian, single-site potentials, banded couplings and boundary fold-in.
//!
//! Window sites are indexed `0..n`. Lattice positions outside the window use
//! signed indices: `-1, -2, ..` on the left and `n, n + 1, ..` on the right.
//! Boundary vectors in the configuration are ordered nearest-first, so
//! `boundary_left[0]` is the spin at `-1` and `boundary_right[0]` the spin at
//! `n`. Only the `range` nearest boundary sites on each side enter the model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance applied to the diagonal-dominance inequality.
const DOMINANCE_SLACK: f64 = 1e-12;

/// Bounded perturbation of the quadratic single-site potential.
///
/// The full single-site potential is `z^2 / 2 + perturbation(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    Zero,
    /// `beta * cos(omega * z)`
    Cosine { beta: f64, omega: f64 },
    /// `-beta * exp(-z^2 / (2 width^2))`
    GaussianBump { beta: f64, width: f64 },
}

/// Upper bounds on the sup-norms of a perturbation and its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupNorms {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

impl Potential {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Potential::Zero => Ok(()),
            Potential::Cosine { beta, omega } => {
                if !(beta.is_finite() && beta >= 0.0) {
                    return Err(Error::InvalidModel(format!("cosine amplitude must be >= 0, got {beta}")));
                }
                if !(omega.is_finite() && omega > 0.0) {
                    return Err(Error::InvalidModel(format!("cosine frequency must be > 0, got {omega}")));
                }
                Ok(())
            }
            Potential::GaussianBump { beta, width } => {
                if !(beta.is_finite() && beta >= 0.0) {
                    return Err(Error::InvalidModel(format!("bump amplitude must be >= 0, got {beta}")));
                }
                if !(width.is_finite() && width > 0.0) {
                    return Err(Error::InvalidModel(format!("bump width must be > 0, got {width}")));
                }
                Ok(())
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Potential::Zero => true,
            Potential::Cosine { beta, .. } | Potential::GaussianBump { beta, .. } => beta == 0.0,
        }
    }

    #[inline]
    pub fn value(&self, z: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::Cosine { beta, omega } => beta * (omega * z).cos(),
            Potential::GaussianBump { beta, width } => -beta * (-z * z / (2.0 * width * width)).exp(),
        }
    }

    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::Cosine { beta, omega } => -beta * omega * (omega * z).sin(),
            Potential::GaussianBump { beta, width } => {
                let w2 = width * width;
                beta * z / w2 * (-z * z / (2.0 * w2)).exp()
            }
        }
    }

    #[inline]
    pub fn second_derivative(&self, z: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::Cosine { beta, omega } => -beta * omega * omega * (omega * z).cos(),
            Potential::GaussianBump { beta, width } => {
                let w2 = width * width;
                beta / w2 * (1.0 - z * z / w2) * (-z * z / (2.0 * w2)).exp()
            }
        }
    }

    pub fn sup_norms(&self) -> SupNorms {
        match *self {
            Potential::Zero => SupNorms { value: 0.0, first: 0.0, second: 0.0 },
            Potential::Cosine { beta, omega } => SupNorms {
                value: beta,
                first: beta * omega,
                second: beta * omega * omega,
            },
            Potential::GaussianBump { beta, width } => SupNorms {
                value: beta,
                first: beta / (width * std::f64::consts::E.sqrt()),
                second: beta / (width * width),
            },
        }
    }

    /// Full single-site potential `z^2 / 2 + perturbation(z)`.
    #[inline]
    pub fn full(&self, z: f64) -> f64 {
        0.5 * z * z + self.value(z)
    }
}

/// Coupling specification as written in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionConfig {
    pub range: usize,
    /// Translation-invariant band `c_1..c_R`, `M_ij = c_|i-j|`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub band: Vec<f64>,
    /// Explicit banded table: row `r` holds `M_{p, p+k}` for `k = 1..=range`
    /// where `p = r - range` runs over lattice positions `-range..n+range`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub table: Vec<Vec<f64>>,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub field: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boundary_left: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boundary_right: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_spin: Option<f64>,
}

/// Serializable model description; the `[potential]`, `[interaction]` and
/// `[window]` tables of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub potential: Potential,
    pub interaction: InteractionConfig,
    pub window: WindowConfig,
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// External parameter of the ensemble: a grand-canonical tilt or a canonical mean spin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tilt {
    Sigma(f64),
    MeanSpin(f64),
}

/// Validated model: potential, couplings, window, field and boundary.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    config: ModelConfig,
    n: usize,
    range: usize,
    field: Vec<f64>,
    effective: Vec<f64>,
    /// `neighbours[i]` lists `(j, M_ij)` for window sites `j != i` within range.
    neighbours: Vec<Vec<(usize, f64)>>,
    /// `couplings[i][k-1] = M_{i, i+k}` for window positions, including pairs reaching the right boundary.
    couplings: Vec<Vec<f64>>,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl ModelSpec {
    pub fn from_config(config: ModelConfig) -> Result<Self> {
        config.potential.validate()?;
        let n = config.window.n;
        let range = config.interaction.range;
        if n == 0 {
            return Err(Error::InvalidModel("window size must be positive".into()));
        }
        if range == 0 {
            return Err(Error::InvalidModel("interaction range must be positive".into()));
        }
        let delta = config.interaction.delta;
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidModel(format!("dominance margin must be > 0, got {delta}")));
        }
        let field = match config.window.field.len() {
            0 => vec![0.0; n],
            len if len == n => config.window.field.clone(),
            len => return Err(Error::InvalidModel(format!("field has {len} entries for a window of {n} sites"))),
        };
        if config.window.sigma.is_some() && config.window.mean_spin.is_some() {
            return Err(Error::InvalidModel("specify either sigma or mean_spin, not both".into()));
        }
        let left = boundary_slice(&config.window.boundary_left, range, "boundary_left")?;
        let right = boundary_slice(&config.window.boundary_right, range, "boundary_right")?;

        let lookup = CouplingLookup::new(&config.interaction, n)?;

        // Strict diagonal dominance for every window site.
        for i in 0..n as i64 {
            let mut row = 0.0;
            for k in 1..=range as i64 {
                row += lookup.get(i, i + k).abs() + lookup.get(i - k, i).abs();
            }
            if row + delta > 1.0 + DOMINANCE_SLACK {
                return Err(Error::InvalidModel(format!(
                    "coupling row {i} violates diagonal dominance: sum |M_ij| + delta = {} > 1",
                    row + delta
                )));
            }
        }

        let mut neighbours = vec![Vec::new(); n];
        let mut couplings = vec![vec![0.0; range]; n];
        for i in 0..n {
            for k in 1..=range {
                let c = lookup.get(i as i64, (i + k) as i64);
                couplings[i][k - 1] = c;
            }
            let lo = i.saturating_sub(range);
            let hi = (i + range).min(n - 1);
            for j in lo..=hi {
                if j != i {
                    let (a, b) = if i < j { (i, j) } else { (j, i) };
                    let c = lookup.get(a as i64, b as i64);
                    if c != 0.0 {
                        neighbours[i].push((j, c));
                    }
                }
            }
        }

        let mut effective = field.clone();
        for (i, s) in effective.iter_mut().enumerate() {
            let i = i as i64;
            let mut fold = 0.0;
            for k in 1..=range as i64 {
                let j = i - k;
                if j < 0 {
                    fold += lookup.get(j, i) * left[(-j - 1) as usize];
                }
                let j = i + k;
                if j >= n as i64 {
                    fold += lookup.get(i, j) * right[(j - n as i64) as usize];
                }
            }
            *s += 0.5 * fold;
        }

        Ok(Self {
            config,
            n,
            range,
            field,
            effective,
            neighbours,
            couplings,
            left,
            right,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_config(ModelConfig::from_toml_str(text)?)
    }

    /// Translation-invariant model with zero field and zero boundary.
    pub fn translation_invariant(potential: Potential, band: &[f64], delta: f64, n: usize) -> Result<Self> {
        Self::from_config(ModelConfig {
            potential,
            interaction: InteractionConfig {
                range: band.len().max(1),
                band: if band.is_empty() { vec![0.0] } else { band.to_vec() },
                table: Vec::new(),
                delta,
            },
            window: WindowConfig {
                n,
                field: Vec::new(),
                boundary_left: Vec::new(),
                boundary_right: Vec::new(),
                sigma: None,
                mean_spin: None,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn range(&self) -> usize {
        self.range
    }

    pub fn potential(&self) -> &Potential {
        &self.config.potential
    }

    pub fn delta(&self) -> f64 {
        self.config.interaction.delta
    }

    pub fn field(&self) -> &[f64] {
        &self.field
    }

    /// Boundary spins nearest-first, exactly `range` entries per side.
    pub fn boundary(&self) -> (&[f64], &[f64]) {
        (&self.left, &self.right)
    }

    pub fn tilt(&self) -> Option<Tilt> {
        match (self.config.window.sigma, self.config.window.mean_spin) {
            (Some(s), _) => Some(Tilt::Sigma(s)),
            (_, Some(m)) => Some(Tilt::MeanSpin(m)),
            _ => None,
        }
    }

    pub fn is_translation_invariant(&self) -> bool {
        self.config.interaction.table.is_empty()
    }

    /// `M_ij` for window sites `i != j`; zero beyond the range.
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let d = b - a;
        if d == 0 {
            1.0
        } else if d > self.range {
            0.0
        } else {
            self.couplings[a][d - 1]
        }
    }

    /// Window neighbours of site `i` with their couplings.
    pub fn neighbours(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbours[i]
    }

    /// Field seen by each window site after folding in the boundary:
    /// `s_i + 1/2 sum_{j outside, |j-i| <= R} M_ij x_j`.
    pub fn effective_field(&self) -> &[f64] {
        &self.effective
    }

    /// Same model with a different window size. The field must be empty or uniform.
    pub fn with_size(&self, n: usize) -> Result<Self> {
        let mut config = self.config.clone();
        let field = &config.window.field;
        if !field.is_empty() {
            let first = field[0];
            if field.iter().any(|&s| s != first) {
                return Err(Error::InvalidConfig("cannot resize a model with a non-uniform field".into()));
            }
            config.window.field = vec![first; n];
        }
        if !config.interaction.table.is_empty() {
            return Err(Error::InvalidConfig("cannot resize a model with an explicit coupling table".into()));
        }
        config.window.n = n;
        Self::from_config(config)
    }

    /// Same model with new boundary values (nearest-first on each side).
    pub fn with_boundary(&self, left: Vec<f64>, right: Vec<f64>) -> Result<Self> {
        let mut config = self.config.clone();
        config.window.boundary_left = left;
        config.window.boundary_right = right;
        Self::from_config(config)
    }

    /// Same model with the perturbation removed.
    pub fn gaussian_part(&self) -> Self {
        let mut out = self.clone();
        out.config.potential = Potential::Zero;
        out
    }

    /// Same model with `potential` replaced.
    pub fn with_potential(&self, potential: Potential) -> Result<Self> {
        let mut config = self.config.clone();
        config.potential = potential;
        Self::from_config(config)
    }

    pub fn same_except_boundary(&self, other: &ModelSpec) -> bool {
        let mut a = self.config.clone();
        let mut b = other.config.clone();
        a.window.boundary_left.clear();
        a.window.boundary_right.clear();
        b.window.boundary_left.clear();
        b.window.boundary_right.clear();
        a == b
    }

    /// Stable hex digest of the model configuration.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_string(&self.config).unwrap_or_default();
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }
}

fn boundary_slice(values: &[f64], range: usize, name: &str) -> Result<Vec<f64>> {
    if values.is_empty() {
        Ok(vec![0.0; range])
    } else if values.len() < range {
        Err(Error::InvalidModel(format!(
            "{name} needs at least {range} values (nearest-first), got {}",
            values.len()
        )))
    } else {
        Ok(values[..range].to_vec())
    }
}

/// Coupling lookup over lattice positions including the boundary layer.
struct CouplingLookup<'a> {
    config: &'a InteractionConfig,
    n: usize,
}

impl<'a> CouplingLookup<'a> {
    fn new(config: &'a InteractionConfig, n: usize) -> Result<Self> {
        let range = config.range;
        match (config.band.is_empty(), config.table.is_empty()) {
            (false, true) => {
                if config.band.len() != range {
                    return Err(Error::InvalidModel(format!(
                        "band has {} coefficients for range {range}",
                        config.band.len()
                    )));
                }
                if config.band.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidModel("band coefficients must be finite".into()));
                }
            }
            (true, false) => {
                let rows = n + 2 * range;
                if config.table.len() != rows {
                    return Err(Error::InvalidModel(format!(
                        "coupling table needs {rows} rows (positions -{range}..{}), got {}",
                        n + range,
                        config.table.len()
                    )));
                }
                if config.table.iter().any(|r| r.len() != range || r.iter().any(|c| !c.is_finite())) {
                    return Err(Error::InvalidModel(format!("every table row needs {range} finite entries")));
                }
            }
            (true, true) => return Err(Error::InvalidModel("interaction needs a band or a table".into())),
            (false, false) => return Err(Error::InvalidModel("give either band or table, not both".into())),
        }
        Ok(Self { config, n })
    }

    /// `M_ab` for lattice positions `a < b`.
    fn get(&self, a: i64, b: i64) -> f64 {
        let range = self.config.range as i64;
        let d = b - a;
        if d <= 0 || d > range {
            return 0.0;
        }
        if !self.config.band.is_empty() {
            return self.config.band[(d - 1) as usize];
        }
        let row = a + range;
        if row < 0 || row as usize >= self.n + 2 * self.config.range {
            return 0.0;
        }
        self.config.table[row as usize][(d - 1) as usize]
    }
}

/// One configuration of the window spins.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinConfig {
    spins: Vec<f64>,
    constraint: Option<f64>,
}

/// Allowed deviation of a constrained configuration from its target mean.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-9;

impl SpinConfig {
    pub fn free(spins: Vec<f64>) -> Self {
        Self { spins, constraint: None }
    }

    pub fn constrained(spins: Vec<f64>, mean: f64) -> Result<Self> {
        let actual = spins.iter().sum::<f64>() / spins.len().max(1) as f64;
        if (actual - mean).abs() > CONSTRAINT_TOLERANCE {
            return Err(Error::InvalidModel(format!(
                "configuration mean {actual} differs from constraint {mean}"
            )));
        }
        Ok(Self { spins, constraint: Some(mean) })
    }

    /// Constant configuration; satisfies the constraint exactly.
    pub fn constant(n: usize, value: f64, constrained: bool) -> Self {
        Self { spins: vec![value; n], constraint: constrained.then_some(value) }
    }

    pub fn spins(&self) -> &[f64] {
        &self.spins
    }

    pub fn spins_mut(&mut self) -> &mut [f64] {
        &mut self.spins
    }

    pub fn constraint(&self) -> Option<f64> {
        self.constraint
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.spins.iter().sum::<f64>() / self.spins.len().max(1) as f64
    }
}

fn check_len(config: &SpinConfig, model: &ModelSpec) -> Result<()> {
    if config.len() != model.n() {
        return Err(Error::DimensionMismatch { expected: model.n(), got: config.len() });
    }
    Ok(())
}

/// Finite-volume energy with the boundary folded into the field.
///
/// `sum_i [psi(x_i) + s~_i x_i + 1/2 sum_{j in window, 1<=|j-i|<=R} M_ij x_i x_j]`
pub fn energy(config: &SpinConfig, model: &ModelSpec) -> Result<f64> {
    check_len(config, model)?;
    let x = config.spins();
    let potential = model.potential();
    let field = model.effective_field();
    let mut total = 0.0;
    for i in 0..x.len() {
        let mut pair = 0.0;
        for &(j, c) in model.neighbours(i) {
            pair += c * x[j];
        }
        total += potential.full(x[i]) + field[i] * x[i] + 0.5 * pair * x[i];
    }
    Ok(total)
}

pub fn grad_energy(config: &SpinConfig, model: &ModelSpec) -> Result<Vec<f64>> {
    check_len(config, model)?;
    let x = config.spins();
    let potential = model.potential();
    let field = model.effective_field();
    Ok((0..x.len())
        .map(|i| {
            let pair: f64 = model.neighbours(i).iter().map(|&(j, c)| c * x[j]).sum();
            x[i] + potential.derivative(x[i]) + field[i] + pair
        })
        .collect())
}

pub fn effective_field(model: &ModelSpec) -> Vec<f64> {
    model.effective_field().to_vec()
}

/// Single-site conditional law under the grand-canonical density.
///
/// Given the other spins, `x_i` has density proportional to
/// `exp(-(x - center)^2 / 2 - perturbation(x))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteConditional {
    pub center: f64,
    /// `exp(|perturbation|_inf)`: bound on the target/proposal density ratio.
    pub envelope: f64,
}

impl SiteConditional {
    /// Lower bound on the acceptance probability of the Gaussian-proposal sampler.
    pub fn min_acceptance(&self) -> f64 {
        1.0 / (self.envelope * self.envelope)
    }
}

#[inline]
pub(crate) fn conditional_center(i: usize, x: &[f64], model: &ModelSpec, sigma: f64) -> f64 {
    let pair: f64 = model.neighbours(i).iter().map(|&(j, c)| c * x[j]).sum();
    sigma - model.effective_field()[i] - pair
}

pub fn site_conditional(i: usize, config: &SpinConfig, model: &ModelSpec, sigma: f64) -> Result<SiteConditional> {
    check_len(config, model)?;
    if i >= model.n() {
        return Err(Error::IndexOutOfRange { index: i, n: model.n() });
    }
    Ok(SiteConditional {
        center: conditional_center(i, config.spins(), model, sigma),
        envelope: model.potential().sup_norms().value.exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_site() -> ModelSpec {
        ModelSpec::translation_invariant(Potential::Zero, &[-0.2], 0.5, 2).unwrap()
    }

    fn one_site_with_boundary() -> ModelSpec {
        let mut cfg = two_site().config().clone();
        cfg.window.n = 1;
        cfg.window.field = vec![0.3];
        cfg.window.boundary_left = vec![2.0];
        ModelSpec::from_config(cfg).unwrap()
    }

    #[test]
    fn energy_hand_values() {
        let m = two_site();
        let e = energy(&SpinConfig::free(vec![1.0, 1.0]), &m).unwrap();
        assert!((e - 0.8).abs() < 1e-15);
        let e = energy(&SpinConfig::free(vec![0.0, 0.0]), &m).unwrap();
        assert_eq!(e, 0.0);
        let m1 = one_site_with_boundary();
        let e = energy(&SpinConfig::free(vec![1.0]), &m1).unwrap();
        assert!((e - 0.6).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = two_site();
        assert!(matches!(
            energy(&SpinConfig::free(vec![1.0]), &m),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(grad_energy(&SpinConfig::free(vec![1.0; 3]), &m).is_err());
    }

    #[test]
    fn gradient_hand_values() {
        let m = two_site();
        let g = grad_energy(&SpinConfig::free(vec![1.0, 1.0]), &m).unwrap();
        assert!((g[0] - 0.8).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let g = grad_energy(&SpinConfig::free(vec![0.0, 0.0]), &m).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn effective_field_values() {
        assert_eq!(effective_field(&two_site()), vec![0.0, 0.0]);
        assert!((effective_field(&one_site_with_boundary())[0] - 0.1).abs() < 1e-15);

        let mut cfg = ModelSpec::translation_invariant(Potential::Zero, &[-0.15, -0.1], 0.5, 6)
            .unwrap()
            .config()
            .clone();
        cfg.window.field = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        cfg.window.boundary_left = vec![1.5, -0.7];
        let m = ModelSpec::from_config(cfg).unwrap();
        let s = effective_field(&m);
        assert!((s[0] - (0.1 + 0.5 * (-0.15 * 1.5 - 0.1 * -0.7))).abs() < 1e-15);
        assert!((s[1] - (0.2 + 0.5 * (-0.1 * 1.5))).abs() < 1e-15);
        assert_eq!(&s[2..], m.field().get(2..).unwrap());
    }

    #[test]
    fn site_conditional_values() {
        let id = ModelSpec::translation_invariant(Potential::Zero, &[0.0], 0.5, 3).unwrap();
        let c = site_conditional(1, &SpinConfig::free(vec![0.4, -1.0, 2.0]), &id, 0.7).unwrap();
        assert_eq!(c.center, 0.7);
        assert_eq!(c.envelope, 1.0);

        let c = site_conditional(0, &SpinConfig::free(vec![0.0, 1.0]), &two_site(), 0.0).unwrap();
        assert!((c.center - 0.2).abs() < 1e-15);

        let cos = two_site().with_potential(Potential::Cosine { beta: 1.0, omega: 1.0 }).unwrap();
        let c = site_conditional(0, &SpinConfig::free(vec![0.0, 1.0]), &cos, 0.0).unwrap();
        assert!((c.envelope - std::f64::consts::E).abs() < 1e-12);
        assert!((c.min_acceptance() - (-2.0f64).exp()).abs() < 1e-12);
        assert!((c.min_acceptance() - 0.1353).abs() < 1e-4);

        assert!(matches!(
            site_conditional(5, &SpinConfig::free(vec![0.0, 1.0]), &two_site(), 0.0),
            Err(Error::IndexOutOfRange { index: 5, n: 2 })
        ));
    }

    #[test]
    fn dominance_is_enforced() {
        assert!(ModelSpec::translation_invariant(Potential::Zero, &[-0.25], 0.5, 4).is_ok());
        assert!(ModelSpec::translation_invariant(Potential::Zero, &[-0.26], 0.5, 4).is_err());
        assert!(ModelSpec::translation_invariant(Potential::Zero, &[0.15, -0.11], 0.5, 4).is_err());
        assert!(ModelSpec::translation_invariant(Potential::Zero, &[0.15, -0.1], 0.5, 4).is_ok());
    }

    #[test]
    fn sup_norms_closed_form() {
        assert_eq!(Potential::Zero.sup_norms(), SupNorms { value: 0.0, first: 0.0, second: 0.0 });
        let c = Potential::Cosine { beta: 1.5, omega: 2.0 }.sup_norms();
        assert_eq!((c.value, c.first, c.second), (1.5, 3.0, 6.0));
        // Bump bounds dominate a dense sampling of the actual functions.
        let p = Potential::GaussianBump { beta: 0.8, width: 0.7 };
        let s = p.sup_norms();
        for k in -4000..=4000 {
            let z = k as f64 * 1e-3;
            assert!(p.value(z).abs() <= s.value + 1e-15);
            assert!(p.derivative(z).abs() <= s.first + 1e-12);
            assert!(p.second_derivative(z).abs() <= s.second + 1e-12);
        }
    }

    #[test]
    fn explicit_table_matches_band() {
        let band = ModelSpec::translation_invariant(Potential::Zero, &[-0.15, -0.1], 0.5, 5).unwrap();
        let mut cfg = band.config().clone();
        cfg.interaction.band.clear();
        cfg.interaction.table = vec![vec![-0.15, -0.1]; 5 + 4];
        cfg.window.boundary_left = vec![1.0, 2.0];
        cfg.window.boundary_right = vec![-1.0, 0.5];
        let table = ModelSpec::from_config(cfg.clone()).unwrap();
        let mut cfg_band = band.config().clone();
        cfg_band.window.boundary_left = vec![1.0, 2.0];
        cfg_band.window.boundary_right = vec![-1.0, 0.5];
        let band = ModelSpec::from_config(cfg_band).unwrap();
        assert_eq!(table.effective_field(), band.effective_field());
        let x = SpinConfig::free(vec![0.3, -1.2, 0.8, 2.0, -0.4]);
        assert_eq!(energy(&x, &table).unwrap(), energy(&x, &band).unwrap());
        cfg.interaction.table.pop();
        assert!(ModelSpec::from_config(cfg).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            [potential]
            kind = "cosine"
            beta = 1.0
            omega = 1.0

            [interaction]
            range = 2
            band = [-0.15, -0.1]
            delta = 0.5

            [window]
            n = 8
            boundary_left = [2.0, 2.0]
            mean_spin = 0.3
        "#;
        let m = ModelSpec::from_toml_str(text).unwrap();
        assert_eq!(m.n(), 8);
        assert_eq!(m.range(), 2);
        assert_eq!(m.tilt(), Some(Tilt::MeanSpin(0.3)));
        assert_eq!(m.boundary().0, &[2.0, 2.0]);
        let again = ModelSpec::from_toml_str(&m.config().to_toml_string().unwrap()).unwrap();
        assert_eq!(again.config(), m.config());
        assert_eq!(again.hash(), m.hash());
    }

    #[test]
    fn constrained_config_checks_mean() {
        assert!(SpinConfig::constrained(vec![0.5, 0.9], 0.7).is_ok());
        assert!(SpinConfig::constrained(vec![0.5, 0.9 + 1e-6], 0.7).is_err());
    }

    fn reference_cosine(n: usize) -> ModelSpec {
        let mut cfg = ModelSpec::translation_invariant(Potential::Cosine { beta: 1.0, omega: 1.3 }, &[-0.15, -0.1], 0.5, n)
            .unwrap()
            .config()
            .clone();
        cfg.window.field = (0..n).map(|i| 0.1 * i as f64 - 0.2).collect();
        cfg.window.boundary_left = vec![1.0, -2.0];
        cfg.window.boundary_right = vec![0.5, 0.25];
        ModelSpec::from_config(cfg).unwrap()
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(xs in proptest::collection::vec(-3.0f64..3.0, 7)) {
            let model = reference_cosine(7);
            let cfg = SpinConfig::free(xs.clone());
            let g = grad_energy(&cfg, &model).unwrap();
            let h = 1e-5;
            for i in 0..xs.len() {
                let mut up = xs.clone();
                let mut dn = xs.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (energy(&SpinConfig::free(up), &model).unwrap()
                    - energy(&SpinConfig::free(dn), &model).unwrap()) / (2.0 * h);
                let scale = g[i].abs().max(1.0);
                prop_assert!((fd - g[i]).abs() / scale <= 1e-6, "site {i}: fd {fd} vs {:?}", g[i]);
            }
        }

        #[test]
        fn energy_is_local(xs in proptest::collection::vec(-3.0f64..3.0, 9), site in 0usize..9, kick in -2.0f64..2.0) {
            // Energy change from moving x_site only involves spins within range.
            let model = reference_cosine(9);
            let mut ys = xs.clone();
            let mut far = xs.clone();
            for (j, v) in far.iter_mut().enumerate() {
                if j.abs_diff(site) > model.range() {
                    *v += 1.7;
                }
            }
            let mut far_kicked = far.clone();
            ys[site] += kick;
            far_kicked[site] += kick;
            let d1 = energy(&SpinConfig::free(ys), &model).unwrap() - energy(&SpinConfig::free(xs), &model).unwrap();
            let d2 = energy(&SpinConfig::free(far_kicked), &model).unwrap() - energy(&SpinConfig::free(far), &model).unwrap();
            prop_assert!((d1 - d2).abs() < 1e-9);
        }

        #[test]
        fn extra_boundary_sites_are_ignored(extra in proptest::collection::vec(-5.0f64..5.0, 1..4)) {
            let base = reference_cosine(6);
            let (l, r) = base.boundary();
            let mut left = l.to_vec();
            let mut right = r.to_vec();
            left.extend(&extra);
            right.extend(&extra);
            let padded = base.with_boundary(left, right).unwrap();
            let x = SpinConfig::free(vec![0.1, -0.4, 1.1, 0.0, 2.2, -1.3]);
            prop_assert_eq!(energy(&x, &base).unwrap().to_bits(), energy(&x, &padded).unwrap().to_bits());
        }
    }
}
