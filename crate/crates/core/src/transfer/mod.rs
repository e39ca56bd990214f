//! Transfer-operator engine for nearest-neighbour models.
//!
//! The single-spin space is replaced by a Gauss-Hermite grid, turning the
//! partition integral into an ordered product of `Q x Q` kernels. Forward and
//! backward messages give marginals and block expectations; tilting every
//! site by `exp(i xi (z - m) / sqrt N)` gives the characteristic function of
//! the centered total spin, and integrating over `xi` yields its density at
//! zero and canonical expectations as Fourier ratios.
//!
//! All messages are renormalized after every site and carry a separate log
//! scale, so window sizes of several hundred sites neither overflow nor
//! underflow.

mod fourier;
pub mod quadrature;

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::report::{central_differences, FreeEnergyReport};
use crate::estimators::sigma::{self, MeanSpinEngine, NewtonOptions, SpinResponse};
use crate::gaussian::GaussianModel;
use crate::model::ModelSpec;

pub use fourier::{integrate as integrate_xi, XiIntegral, XiOptions};
pub use quadrature::QuadratureGrid;

type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Largest window the engine accepts.
pub const MAX_SITES: usize = 512;
/// Largest support of a [`LocalFunction`].
pub const MAX_SUPPORT: usize = 4;
/// Finite-difference step for free-energy derivatives.
pub const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferOptions {
    pub nodes: usize,
    pub center: f64,
    pub scale: f64,
    pub xi: XiOptions,
    /// Allowed imaginary part of `g(0)`.
    pub density_imag_tol: f64,
    /// Allowed imaginary part of canonical expectations.
    pub ratio_imag_tol: f64,
}

impl Default for TransferOptions {
    fn default() -> Self {
        Self {
            nodes: 80,
            center: 0.0,
            scale: 1.0,
            xi: XiOptions::default(),
            density_imag_tol: 1e-9,
            ratio_imag_tol: 1e-8,
        }
    }
}

type Eval = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Observable depending on at most [`MAX_SUPPORT`] consecutive spins.
#[derive(Clone)]
pub struct LocalFunction {
    start: usize,
    len: usize,
    label: String,
    eval: Eval,
}

impl fmt::Debug for LocalFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LocalFunction({} on {}..{})", self.label, self.start, self.start + self.len)
    }
}

impl LocalFunction {
    /// `eval` receives the spins `x_start, .., x_{start+len-1}`.
    pub fn new<F>(start: usize, len: usize, label: impl Into<String>, eval: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if len == 0 || len > MAX_SUPPORT {
            return Err(Error::InvalidSupport {
                start,
                end: start + len,
                reason: format!("support size must be 1..={MAX_SUPPORT}"),
            });
        }
        Ok(Self { start, len, label: label.into(), eval: Arc::new(eval) })
    }

    pub fn spin(i: usize) -> Self {
        Self::new(i, 1, format!("x{i}"), |x| x[0]).expect("unit support")
    }

    /// `(x_i - center)^power`
    pub fn spin_power(i: usize, center: f64, power: i32) -> Self {
        Self::new(i, 1, format!("(x{i}-{center})^{power}"), move |x| (x[0] - center).powi(power)).expect("unit support")
    }

    pub fn constant(i: usize, value: f64) -> Self {
        Self::new(i, 1, format!("{value}"), move |_| value).expect("unit support")
    }

    pub fn support(&self) -> Range<usize> {
        self.start..self.start + self.len
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, spins: &[f64]) -> f64 {
        (self.eval)(spins)
    }

    pub fn overlaps(&self, other: &LocalFunction) -> bool {
        self.start < other.start + other.len && other.start < self.start + self.len
    }

    /// Combines two functions on the interval spanned by both supports.
    pub fn combine<F>(&self, other: &LocalFunction, label: impl Into<String>, op: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        let start = self.start.min(other.start);
        let end = (self.start + self.len).max(other.start + other.len);
        if end - start > MAX_SUPPORT {
            return Err(Error::InvalidSupport {
                start,
                end,
                reason: format!("combined support exceeds {MAX_SUPPORT} sites"),
            });
        }
        let (a, b) = (self.clone(), other.clone());
        let (oa, ob) = (a.start - start, b.start - start);
        Self::new(start, end - start, label, move |x| {
            op(a.eval(&x[oa..oa + a.len]), b.eval(&x[ob..ob + b.len]))
        })
    }

    pub fn product(&self, other: &LocalFunction) -> Result<Self> {
        self.combine(other, format!("{}*{}", self.label, other.label), |u, v| u * v)
    }

    /// `exp(t f)`
    pub fn exp_tilt(&self, t: f64) -> Self {
        let inner = self.clone();
        Self {
            start: self.start,
            len: self.len,
            label: format!("exp({t}*{})", self.label),
            eval: Arc::new(move |x| (t * inner.eval(x)).exp()),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.start + self.len > n {
            return Err(Error::InvalidSupport {
                start: self.start,
                end: self.start + self.len,
                reason: format!("outside window of {n} sites"),
            });
        }
        Ok(())
    }
}

/// Complex number stored as `exp(log) * value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaled {
    pub log: f64,
    pub value: C64,
}

impl Scaled {
    fn zero() -> Self {
        Self { log: 0.0, value: ZERO }
    }

    /// `self / other` as an ordinary complex number.
    pub fn ratio(&self, other: &Scaled) -> C64 {
        if self.value == ZERO {
            return ZERO;
        }
        self.value / other.value * (self.log - other.log).exp()
    }

    /// Natural log of the modulus.
    pub fn ln_abs(&self) -> f64 {
        self.log + self.value.norm().ln()
    }
}

/// Discretized kernel for one choice of tilts.
///
/// Site weights `exp(u_i(z))` times the Lebesgue quadrature weight, split into
/// a normalized complex vector and a real log shift; bond factors
/// `exp(-M_{i,i+1} z z')` shared between bonds with equal coupling.
#[derive(Debug, Clone)]
pub struct TransferKernel {
    site: Vec<Vec<C64>>,
    shift: Vec<f64>,
    bonds: Arc<Vec<Vec<f64>>>,
    bond_of: Arc<Vec<usize>>,
    q: usize,
}

impl TransferKernel {
    pub fn n(&self) -> usize {
        self.site.len()
    }

    /// True when every site weight and bond entry is a positive real.
    pub fn is_positive(&self) -> bool {
        self.site.iter().all(|w| w.iter().all(|c| c.im == 0.0 && c.re > 0.0))
            && self.bonds.iter().all(|b| b.iter().all(|&v| v > 0.0))
    }

    /// `out(z') = sum_z v(z) B(z, z')` across bond `i -> i+1`.
    fn propagate(&self, bond: usize, v: &[C64]) -> Vec<C64> {
        let q = self.q;
        let b = &self.bonds[self.bond_of[bond]];
        let mut out = vec![ZERO; q];
        for (zq, &vz) in v.iter().enumerate() {
            if vz == ZERO {
                continue;
            }
            let row = &b[zq * q..(zq + 1) * q];
            for (o, &k) in out.iter_mut().zip(row) {
                *o += vz * k;
            }
        }
        out
    }

    /// `out(z) = sum_z' B(z, z') v(z')` across bond `i -> i+1`.
    fn propagate_back(&self, bond: usize, v: &[C64]) -> Vec<C64> {
        // The bond factor is symmetric in its arguments.
        self.propagate(bond, v)
    }
}

fn normalize(v: &mut [C64]) -> f64 {
    let m = v.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if m > 0.0 && m.is_finite() {
        let inv = 1.0 / m;
        for c in v.iter_mut() {
            *c *= inv;
        }
        m.ln()
    } else {
        0.0
    }
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Forward and backward messages for one kernel.
struct Chain<'k> {
    kernel: &'k TransferKernel,
    /// Normalized forward messages including the site weight.
    alpha: Vec<Vec<C64>>,
    alpha_log: Vec<f64>,
    /// Normalized backward messages excluding the site weight.
    beta: Vec<Vec<C64>>,
    beta_log: Vec<f64>,
    z: Scaled,
}

impl<'k> Chain<'k> {
    fn new(kernel: &'k TransferKernel, backward: bool) -> Self {
        let n = kernel.n();
        let q = kernel.q;
        let mut alpha = Vec::with_capacity(n);
        let mut alpha_log = Vec::with_capacity(n);
        let mut incoming = vec![ONE; q];
        let mut log = 0.0;
        for i in 0..n {
            let mut a: Vec<C64> = kernel.site[i].iter().zip(&incoming).map(|(w, v)| w * v).collect();
            log += kernel.shift[i] + normalize(&mut a);
            if i + 1 < n {
                incoming = kernel.propagate(i, &a);
            }
            alpha.push(a);
            alpha_log.push(log);
        }
        let last = &alpha[n - 1];
        let z = Scaled { log: alpha_log[n - 1], value: last.iter().sum() };
        let (beta, beta_log) = if backward { Self::backward(kernel) } else { (Vec::new(), Vec::new()) };
        Self { kernel, alpha, alpha_log, beta, beta_log, z }
    }

    fn backward(kernel: &TransferKernel) -> (Vec<Vec<C64>>, Vec<f64>) {
        let n = kernel.n();
        let q = kernel.q;
        let mut beta = vec![Vec::new(); n];
        let mut beta_log = vec![0.0; n];
        beta[n - 1] = vec![ONE; q];
        let mut log = 0.0;
        for i in (0..n - 1).rev() {
            let weighted: Vec<C64> = kernel.site[i + 1].iter().zip(&beta[i + 1]).map(|(w, b)| w * b).collect();
            let mut b = kernel.propagate_back(i, &weighted);
            log += kernel.shift[i + 1] + normalize(&mut b);
            beta[i] = b;
            beta_log[i] = log;
        }
        (beta, beta_log)
    }

    /// `sum_z alpha_i(z) h(z) beta_i(z)`, unnormalized.
    fn site(&self, i: usize, h: impl Fn(f64) -> f64, nodes: &[f64]) -> Scaled {
        let value = self.alpha[i]
            .iter()
            .zip(&self.beta[i])
            .zip(nodes)
            .map(|((a, b), &z)| a * b * h(z))
            .sum();
        Scaled { log: self.alpha_log[i] + self.beta_log[i], value }
    }

    /// Message entering site `i` from the left, with its log scale.
    fn incoming(&self, i: usize) -> (Vec<C64>, f64) {
        if i == 0 {
            (vec![ONE; self.kernel.q], 0.0)
        } else {
            (self.kernel.propagate(i - 1, &self.alpha[i - 1]), self.alpha_log[i - 1])
        }
    }

    /// Expectation numerator of a product of local functions with disjoint supports.
    fn blocks(&self, funcs: &[&LocalFunction], nodes: &[f64]) -> Scaled {
        let mut funcs: Vec<&LocalFunction> = funcs.to_vec();
        funcs.sort_by_key(|f| f.start);
        let n = self.kernel.n();
        if funcs.is_empty() {
            return self.z;
        }
        let first = funcs[0].start;
        let (mut msg, mut log) = self.incoming(first);
        let mut site = first;
        let mut idx = 0;
        loop {
            // Entering `site` with `msg` (message before the site weight).
            if idx < funcs.len() && funcs[idx].start == site {
                let f = funcs[idx];
                let (out, add) = self.block_sweep(&msg, f, nodes);
                msg = out;
                log += add;
                let m = normalize(&mut msg);
                if msg.iter().all(|c| *c == ZERO) {
                    return Scaled::zero();
                }
                log += m;
                site = f.start + f.len - 1;
                idx += 1;
            } else {
                let mut a: Vec<C64> = self.kernel.site[site].iter().zip(&msg).map(|(w, v)| w * v).collect();
                log += self.kernel.shift[site] + normalize(&mut a);
                msg = a;
            }
            if idx == funcs.len() {
                break;
            }
            msg = self.kernel.propagate(site, &msg);
            site += 1;
            if site >= n {
                break;
            }
        }
        let value = dot(&msg, &self.beta[site]);
        Scaled { log: log + self.beta_log[site], value }
    }

    /// Sums over all grid tuples on the support of `f`, starting from the
    /// incoming message at its first site. Returns the outgoing message at its
    /// last site (site weight included) and the accumulated log shift.
    fn block_sweep(&self, incoming: &[C64], f: &LocalFunction, nodes: &[f64]) -> (Vec<C64>, f64) {
        let q = self.kernel.q;
        let s = f.start;
        let shift: f64 = (s..s + f.len).map(|k| self.kernel.shift[k]).sum();
        let mut out = vec![ZERO; q];
        let mut spins = [0.0; MAX_SUPPORT];
        let mut idx = [0usize; MAX_SUPPORT];
        let mut partial = [ZERO; MAX_SUPPORT];
        let len = f.len;
        let mut depth = 0usize;
        idx[0] = 0;
        // Depth-first enumeration of idx[0..len] with running weight products.
        loop {
            if idx[depth] == q {
                if depth == 0 {
                    break;
                }
                depth -= 1;
                idx[depth] += 1;
                continue;
            }
            let zi = idx[depth];
            let site = s + depth;
            let w = if depth == 0 {
                incoming[zi] * self.kernel.site[site][zi]
            } else {
                let b = &self.kernel.bonds[self.kernel.bond_of[site - 1]];
                partial[depth - 1] * b[idx[depth - 1] * q + zi] * self.kernel.site[site][zi]
            };
            spins[depth] = nodes[zi];
            if w == ZERO {
                idx[depth] += 1;
                continue;
            }
            if depth + 1 == len {
                out[zi] += w * f.eval(&spins[..len]);
                idx[depth] += 1;
            } else {
                partial[depth] = w;
                depth += 1;
                idx[depth] = 0;
            }
        }
        (out, shift)
    }

    /// `sum_{z_a, z_j} alpha_a(z_a) h(z_a) ... z_j beta_j(z_j)` for every `j >= a`.
    fn anchored_row(&self, a: usize, nodes: &[f64]) -> Vec<Scaled> {
        let n = self.kernel.n();
        let mut msg: Vec<C64> = self.alpha[a].iter().zip(nodes).map(|(v, &z)| v * z).collect();
        let mut log = self.alpha_log[a];
        let mut out = Vec::with_capacity(n - a);
        for j in a..n {
            if j > a {
                let inc = self.kernel.propagate(j - 1, &msg);
                msg = self.kernel.site[j].iter().zip(&inc).map(|(w, v)| w * v).collect();
                log += self.kernel.shift[j];
            }
            let m = normalize(&mut msg);
            log += m;
            let value = msg.iter().zip(&self.beta[j]).zip(nodes).map(|((u, b), &z)| u * b * z).sum();
            out.push(Scaled { log: log + self.beta_log[j], value });
        }
        out
    }

    /// Numerators of `E[(sum_{k in block} (X_k - c_k))^p]`, `p = 0..=order`.
    fn spin_sum_moments(&self, block: Range<usize>, centers: &[f64], order: usize, nodes: &[f64]) -> Vec<Scaled> {
        let q = self.kernel.q;
        let (inc, mut log) = self.incoming(block.start);
        let mut msgs: Vec<Vec<C64>> = vec![vec![ZERO; q]; order + 1];
        msgs[0] = inc;
        let binom = binomials(order);
        let mut last = block.start;
        for k in block.clone() {
            if k > block.start {
                for m in msgs.iter_mut() {
                    *m = self.kernel.propagate(k - 1, m);
                }
            }
            let c = centers[k - block.start];
            let mut next = vec![vec![ZERO; q]; order + 1];
            for zq in 0..q {
                let d = nodes[zq] - c;
                let w = self.kernel.site[k][zq];
                let mut pw = vec![1.0; order + 1];
                for p in 1..=order {
                    pw[p] = pw[p - 1] * d;
                }
                for p in 0..=order {
                    let mut acc = ZERO;
                    for r in 0..=p {
                        acc += msgs[r][zq] * (binom[p][r] * pw[p - r]);
                    }
                    next[p][zq] = acc * w;
                }
            }
            msgs = next;
            log += self.kernel.shift[k];
            let scale = msgs.iter().flat_map(|m| m.iter()).map(|c| c.norm()).fold(0.0, f64::max);
            if scale > 0.0 {
                for m in msgs.iter_mut() {
                    for c in m.iter_mut() {
                        *c /= scale;
                    }
                }
                log += scale.ln();
            }
            last = k;
        }
        msgs.iter()
            .map(|m| Scaled { log: log + self.beta_log[last], value: dot(m, &self.beta[last]) })
            .collect()
    }
}

fn binomials(order: usize) -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; order + 1]; order + 1];
    for p in 0..=order {
        c[p][0] = 1.0;
        for r in 1..=p {
            c[p][r] = c[p - 1][r - 1] + if r < p { c[p - 1][r] } else { 0.0 };
        }
    }
    c
}

/// Grand-canonical output of [`TransferEngine::gce_stats`].
#[derive(Debug, Clone, PartialEq)]
pub struct GceStats {
    /// `(1/N) ln Z`
    pub log_partition: f64,
    pub means: Vec<f64>,
    /// `covariances[a][b] = cov(f_a, f_b)`
    pub covariances: Vec<Vec<f64>>,
}

/// Result of a Fourier inversion together with the frequency cutoff used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityAtZero {
    pub value: f64,
    pub xi_limit: f64,
    pub evaluations: usize,
}

/// Canonical means of every spin and covariances `cov(x_a, x_j)` for `j >= a`.
#[derive(Debug, Clone, PartialEq)]
pub struct CeSpinRow {
    pub means: Vec<f64>,
    pub covariances: Vec<f64>,
    pub xi_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltCheck {
    /// `|N * mixed difference - cov(f, g)|`
    pub residual: f64,
    /// `|d A / d sigma_f - E[f] / N|` at zero tilt.
    pub first_derivative_residual: f64,
    /// `|A^{f,g}(0, 0) - A_gce|`
    pub untilted_gap: f64,
    pub bound: f64,
}

impl TiltCheck {
    pub fn passes(&self) -> bool {
        self.residual <= self.bound
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementReport {
    pub nodes: usize,
    pub refined_nodes: usize,
    pub max_change: f64,
}

/// Deterministic engine for `range = 1` models.
#[derive(Debug, Clone)]
pub struct TransferEngine {
    model: ModelSpec,
    opts: TransferOptions,
    grid: QuadratureGrid,
    bonds: Arc<Vec<Vec<f64>>>,
    bond_of: Arc<Vec<usize>>,
    /// Node-wise perturbation values.
    psi_b: Vec<f64>,
}

impl TransferEngine {
    pub fn new(model: &ModelSpec) -> Result<Self> {
        Self::with_options(model, TransferOptions::default())
    }

    pub fn with_options(model: &ModelSpec, opts: TransferOptions) -> Result<Self> {
        if model.range() != 1 {
            return Err(Error::RequiresNearestNeighbour(model.range()));
        }
        let n = model.n();
        if n > MAX_SITES {
            return Err(Error::InvalidConfig(format!("transfer engine supports at most {MAX_SITES} sites, got {n}")));
        }
        if opts.nodes < 40 {
            return Err(Error::InvalidConfig(format!("transfer engine needs at least 40 nodes, got {}", opts.nodes)));
        }
        let grid = QuadratureGrid::gauss_hermite(opts.nodes, opts.center, opts.scale)?;
        let q = grid.len();
        let z = grid.nodes();
        let mut cache: HashMap<u64, usize> = HashMap::new();
        let mut bonds = Vec::new();
        let mut bond_of = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n.saturating_sub(1) {
            let c = model.coupling(i, i + 1);
            let id = *cache.entry(c.to_bits()).or_insert_with(|| {
                let mut b = vec![0.0; q * q];
                for a in 0..q {
                    for bb in 0..q {
                        b[a * q + bb] = (-c * z[a] * z[bb]).exp();
                    }
                }
                bonds.push(b);
                bonds.len() - 1
            });
            bond_of.push(id);
        }
        let psi_b = z.iter().map(|&x| model.potential().value(x)).collect();
        Ok(Self {
            model: model.clone(),
            opts,
            grid,
            bonds: Arc::new(bonds),
            bond_of: Arc::new(bond_of),
            psi_b,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn options(&self) -> &TransferOptions {
        &self.opts
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    /// Number of distinct bond matrices held.
    pub fn distinct_bonds(&self) -> usize {
        self.bonds.len()
    }

    /// Kernel at tilt `sigma`, optionally with the frequency tilt
    /// `exp(i xi (z - m) / sqrt N)` on every site.
    pub fn kernel(&self, sigma: f64, frequency: Option<(f64, f64)>) -> TransferKernel {
        let n = self.n();
        let z = self.grid.nodes();
        let lw = self.grid.log_weights();
        let field = self.model.effective_field();
        let root_n = (n as f64).sqrt();
        let mut site = Vec::with_capacity(n);
        let mut shift = Vec::with_capacity(n);
        for &s in field.iter() {
            let logs: Vec<f64> = z
                .iter()
                .zip(lw)
                .zip(&self.psi_b)
                .map(|((&x, &w), &pb)| w + sigma * x - pb - 0.5 * x * x - s * x)
                .collect();
            let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<C64> = match frequency {
                None => logs.iter().map(|l| C64::new((l - top).exp(), 0.0)).collect(),
                Some((xi, m)) => logs
                    .iter()
                    .zip(z)
                    .map(|(l, &x)| C64::from_polar((l - top).exp(), xi * (x - m) / root_n))
                    .collect(),
            };
            site.push(w);
            shift.push(top);
        }
        TransferKernel { site, shift, bonds: Arc::clone(&self.bonds), bond_of: Arc::clone(&self.bond_of), q: z.len() }
    }

    fn check_local(&self, funcs: &[&LocalFunction]) -> Result<()> {
        for f in funcs {
            f.check(self.n())?;
        }
        Ok(())
    }

    /// `(1/N) ln Z(sigma)` with Lebesgue reference measure.
    pub fn log_partition(&self, sigma: f64) -> f64 {
        let k = self.kernel(sigma, None);
        Chain::new(&k, false).z.ln_abs() / self.n() as f64
    }

    pub fn site_means(&self, sigma: f64) -> Vec<f64> {
        let k = self.kernel(sigma, None);
        let chain = Chain::new(&k, true);
        let z = self.grid.nodes();
        (0..self.n()).map(|i| chain.site(i, |x| x, z).ratio(&chain.z).re).collect()
    }

    pub fn mean_spin(&self, sigma: f64) -> f64 {
        self.site_means(sigma).iter().sum::<f64>() / self.n() as f64
    }

    /// `E|X_i - E X_i|^k` for every site.
    pub fn central_absolute_moments(&self, sigma: f64, k: i32) -> Vec<f64> {
        let kern = self.kernel(sigma, None);
        let chain = Chain::new(&kern, true);
        let z = self.grid.nodes();
        (0..self.n())
            .map(|i| {
                let m = chain.site(i, |x| x, z).ratio(&chain.z).re;
                chain.site(i, |x| (x - m).abs().powi(k), z).ratio(&chain.z).re
            })
            .collect()
    }

    /// `E[(sum_{k in block} (X_k - E X_k))^p]` for `p = 0..=order`.
    pub fn block_central_moments(&self, sigma: f64, block: Range<usize>, order: usize) -> Result<Vec<f64>> {
        if block.is_empty() || block.end > self.n() {
            return Err(Error::InvalidSupport { start: block.start, end: block.end, reason: "block outside window".into() });
        }
        let kern = self.kernel(sigma, None);
        let chain = Chain::new(&kern, true);
        let z = self.grid.nodes();
        let centers: Vec<f64> = block.clone().map(|i| chain.site(i, |x| x, z).ratio(&chain.z).re).collect();
        Ok(chain.spin_sum_moments(block, &centers, order, z).iter().map(|s| s.ratio(&chain.z).re).collect())
    }

    /// `(1/N) var(sum X)`, equal to `d^2 A_gce / d sigma^2`.
    pub fn total_variance(&self, sigma: f64) -> f64 {
        let n = self.n();
        self.block_central_moments(sigma, 0..n, 2).map(|m| m[2] / n as f64).unwrap_or(f64::NAN)
    }

    /// `E[f_1 f_2 ...]` for functions with pairwise disjoint supports.
    pub fn expectation_of_product(&self, sigma: f64, funcs: &[&LocalFunction]) -> Result<f64> {
        self.check_local(funcs)?;
        for (i, f) in funcs.iter().enumerate() {
            if funcs[i + 1..].iter().any(|g| g.overlaps(f)) {
                return Err(Error::InvalidSupport {
                    start: f.start,
                    end: f.start + f.len,
                    reason: "supports of a product must be disjoint".into(),
                });
            }
        }
        let kern = self.kernel(sigma, None);
        let chain = Chain::new(&kern, true);
        Ok(chain.blocks(funcs, self.grid.nodes()).ratio(&chain.z).re)
    }

    /// Log partition, means and pairwise covariances of local observables.
    pub fn gce_stats(&self, sigma: f64, observables: &[LocalFunction]) -> Result<GceStats> {
        let refs: Vec<&LocalFunction> = observables.iter().collect();
        self.check_local(&refs)?;
        let kern = self.kernel(sigma, None);
        let chain = Chain::new(&kern, true);
        let z = self.grid.nodes();
        let means: Vec<f64> = observables.iter().map(|f| chain.blocks(&[f], z).ratio(&chain.z).re).collect();
        let k = observables.len();
        let mut covariances = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in a..k {
                let joint = pair_numerator(&chain, &observables[a], &observables[b], z)?.ratio(&chain.z).re;
                let c = joint - means[a] * means[b];
                covariances[a][b] = c;
                covariances[b][a] = c;
            }
        }
        Ok(GceStats { log_partition: chain.z.ln_abs() / self.n() as f64, means, covariances })
    }

    /// `cov(x_a, x_j)` for `j = a..N`.
    pub fn spin_covariance_row(&self, sigma: f64, anchor: usize) -> Result<Vec<f64>> {
        if anchor >= self.n() {
            return Err(Error::IndexOutOfRange { index: anchor, n: self.n() });
        }
        let kern = self.kernel(sigma, None);
        let chain = Chain::new(&kern, true);
        let z = self.grid.nodes();
        let means: Vec<f64> = (0..self.n()).map(|i| chain.site(i, |x| x, z).ratio(&chain.z).re).collect();
        Ok(chain
            .anchored_row(anchor, z)
            .iter()
            .enumerate()
            .map(|(d, s)| s.ratio(&chain.z).re - means[anchor] * means[anchor + d])
            .collect())
    }

    /// `E exp(i xi W)` with `W = N^{-1/2} sum (X_k - m)` under the gce at `sigma`.
    pub fn characteristic_fn(&self, sigma: f64, m: f64, xi: f64) -> C64 {
        let z0 = Chain::new(&self.kernel(sigma, None), false).z;
        self.tilted_partition(sigma, m, xi).ratio(&z0)
    }

    fn tilted_partition(&self, sigma: f64, m: f64, xi: f64) -> Scaled {
        let k = self.kernel(sigma, Some((xi, m)));
        Chain::new(&k, false).z
    }

    /// Characteristic function on a list of frequencies, evaluated in parallel.
    pub fn characteristic_grid(&self, sigma: f64, m: f64, xis: &[f64]) -> Vec<C64> {
        let z0 = Chain::new(&self.kernel(sigma, None), false).z;
        crate::par::map(xis, |&xi| self.tilted_partition(sigma, m, xi).ratio(&z0))
    }

    /// Density at zero of `W` by Fourier inversion, with adaptive cutoff
    /// unless `fixed_limit` is given.
    pub fn density_at_zero_with(&self, sigma: f64, m: f64, fixed_limit: Option<f64>) -> Result<DensityAtZero> {
        let z0 = Chain::new(&self.kernel(sigma, None), false).z;
        let out = fourier::integrate(
            &self.opts.xi,
            |xi| Ok(vec![self.tilted_partition(sigma, m, xi).ratio(&z0)]),
            fixed_limit,
        )?;
        let g = out.values[0] / (2.0 * std::f64::consts::PI);
        if g.im.abs() > self.opts.density_imag_tol {
            return Err(Error::ImaginaryResidue(g.im));
        }
        if g.re.is_nan() || g.re <= 0.0 {
            return Err(Error::Internal(format!("density at zero is not positive: {}", g.re)));
        }
        Ok(DensityAtZero { value: g.re, xi_limit: out.limit, evaluations: out.evaluations })
    }

    pub fn density_at_zero(&self, sigma: f64, m: f64) -> Result<f64> {
        Ok(self.density_at_zero_with(sigma, m, None)?.value)
    }

    fn response_at(&self, sigma: f64) -> SpinResponse {
        let kern = self.kernel(sigma, None);
        let chain = Chain::new(&kern, true);
        let z = self.grid.nodes();
        let n = self.n();
        let means: Vec<f64> = (0..n).map(|i| chain.site(i, |x| x, z).ratio(&chain.z).re).collect();
        let var = chain.spin_sum_moments(0..n, &means, 2, z)[2].ratio(&chain.z).re;
        SpinResponse {
            mean_spin: means.iter().sum::<f64>() / n as f64,
            second_derivative: var / n as f64,
            standard_error: 0.0,
        }
    }

    /// Sigma whose grand-canonical mean spin is `m`.
    pub fn sigma_of_m(&self, m: f64) -> Result<f64> {
        let start = GaussianModel::quadratic_part(&self.model)?.sigma_of_m(m);
        let opts = NewtonOptions { tolerance: 1e-12, ..NewtonOptions::default() };
        sigma::solve(self, m, start, &opts)
    }

    /// Fourier ratios of tilted numerators over `E exp(i xi W)`.
    ///
    /// `numerators(chain, z0)` returns the quantities to integrate, already
    /// divided by the untilted partition function `z0`.
    fn ce_integrals<F>(&self, sigma: f64, m: f64, backward: bool, numerators: F) -> Result<(Vec<f64>, f64)>
    where
        F: Fn(&Chain<'_>, &Scaled) -> Vec<C64> + Sync + Send,
    {
        let z0 = Chain::new(&self.kernel(sigma, None), false).z;
        let out = fourier::integrate(
            &self.opts.xi,
            |xi| {
                let k = self.kernel(sigma, Some((xi, m)));
                let chain = Chain::new(&k, backward);
                let mut v = vec![chain.z.ratio(&z0)];
                v.extend(numerators(&chain, &z0));
                Ok(v)
            },
            None,
        )?;
        let den = out.values[0];
        let mut ratios = Vec::with_capacity(out.values.len() - 1);
        for v in &out.values[1..] {
            let r = v / den;
            if r.im.abs() > self.opts.ratio_imag_tol * r.re.abs().max(1.0) {
                return Err(Error::ImaginaryResidue(r.im));
            }
            ratios.push(r.re);
        }
        Ok((ratios, out.limit))
    }

    /// `E_ce[f_1], E_ce[f_2], ...` at mean spin `m`.
    pub fn ce_expectations(&self, m: f64, funcs: &[LocalFunction]) -> Result<Vec<f64>> {
        let refs: Vec<&LocalFunction> = funcs.iter().collect();
        self.check_local(&refs)?;
        let sigma = self.sigma_of_m(m)?;
        let z = self.grid.nodes();
        Ok(self
            .ce_integrals(sigma, m, true, |chain, z0| funcs.iter().map(|f| chain.blocks(&[f], z).ratio(z0)).collect())?
            .0)
    }

    pub fn ce_expectation(&self, m: f64, f: &LocalFunction) -> Result<f64> {
        Ok(self.ce_expectations(m, std::slice::from_ref(f))?[0])
    }

    /// Canonical covariance of two local functions.
    pub fn ce_covariance(&self, m: f64, f: &LocalFunction, g: &LocalFunction) -> Result<f64> {
        self.check_local(&[f, g])?;
        let sigma = self.sigma_of_m(m)?;
        let z = self.grid.nodes();
        if f.overlaps(g) {
            // Fail early on unsupported unions.
            f.product(g)?;
        }
        let (r, _) = self.ce_integrals(sigma, m, true, |chain, z0| {
            let joint = pair_numerator(chain, f, g, z).map(|s| s.ratio(z0)).unwrap_or(C64::new(f64::NAN, 0.0));
            vec![chain.blocks(&[f], z).ratio(z0), chain.blocks(&[g], z).ratio(z0), joint]
        })?;
        Ok(r[2] - r[0] * r[1])
    }

    /// Canonical means of all spins and `cov_ce(x_a, x_j)` for `j >= a`, one Fourier sweep.
    pub fn ce_spin_row(&self, m: f64, anchor: usize) -> Result<CeSpinRow> {
        let n = self.n();
        if anchor >= n {
            return Err(Error::IndexOutOfRange { index: anchor, n });
        }
        let sigma = self.sigma_of_m(m)?;
        let z = self.grid.nodes();
        let (r, limit) = self.ce_integrals(sigma, m, true, |chain, z0| {
            let mut v: Vec<C64> = (0..n).map(|i| chain.site(i, |x| x, z).ratio(z0)).collect();
            v.extend(chain.anchored_row(anchor, z).iter().map(|s| s.ratio(z0)));
            v
        })?;
        let means = r[..n].to_vec();
        let covariances = r[n..].iter().enumerate().map(|(d, e)| e - means[anchor] * means[anchor + d]).collect();
        Ok(CeSpinRow { means, covariances, xi_limit: limit })
    }

    /// `A^{f,g}(t_f, t_g) = (1/N) ln int exp(sigma sum x - H + t_f f + t_g g)`.
    pub fn modified_free_energy(&self, sigma: f64, f: &LocalFunction, tf: f64, g: &LocalFunction, tg: f64) -> Result<f64> {
        self.check_local(&[f, g])?;
        let kern = self.kernel(sigma, None);
        let chain = Chain::new(&kern, true);
        let z = self.grid.nodes();
        let s = if f.overlaps(g) {
            let joint = f.combine(g, "tilt", move |u, v| (tf * u + tg * v).exp())?;
            chain.blocks(&[&joint], z)
        } else {
            chain.blocks(&[&f.exp_tilt(tf), &g.exp_tilt(tg)], z)
        };
        if s.value.re.is_nan() || s.value.re <= 0.0 {
            return Err(Error::Internal("modified partition function is not positive".into()));
        }
        Ok(s.ln_abs() / self.n() as f64)
    }

    /// Mixed finite difference of the modified free energy against `cov(f, g)`.
    pub fn modified_tilt_check(&self, sigma: f64, f: &LocalFunction, g: &LocalFunction, h: f64) -> Result<TiltCheck> {
        if !(1e-4..=1e-2).contains(&h) {
            return Err(Error::InvalidConfig(format!("tilt step must lie in [1e-4, 1e-2], got {h}")));
        }
        let n = self.n() as f64;
        let a = |tf: f64, tg: f64| self.modified_free_energy(sigma, f, tf, g, tg);
        let mixed = (a(h, h)? - a(h, -h)? - a(-h, h)? + a(-h, -h)?) / (4.0 * h * h);
        let stats = self.gce_stats(sigma, &[f.clone(), g.clone()])?;
        let cov = stats.covariances[0][1];
        let first = (a(h, 0.0)? - a(-h, 0.0)?) / (2.0 * h);
        let scale = stats.covariances[0][0].abs().max(stats.covariances[1][1].abs()).max(1.0);
        Ok(TiltCheck {
            residual: (n * mixed - cov).abs(),
            first_derivative_residual: (first - stats.means[0] / n).abs(),
            untilted_gap: (a(0.0, 0.0)? - stats.log_partition).abs(),
            bound: 1e-5f64.max(h * h * scale),
        })
    }

    /// Free energies and their derivatives by centered differences with step [`FD_STEP`].
    ///
    /// The canonical branch takes `m` to be the gce mean spin at each stencil
    /// point. All three inversions share the frequency cutoff chosen at the
    /// central point, so the differences see one fixed quadrature.
    pub fn free_energy_report(&self, sigma: f64) -> Result<FreeEnergyReport> {
        let h = FD_STEP;
        let n = self.n();
        let stencil = [sigma - h, sigma, sigma + h];
        let a_gce: Vec<f64> = stencil.iter().map(|&s| self.log_partition(s)).collect();
        let ms: Vec<f64> = stencil.iter().map(|&s| self.mean_spin(s)).collect();
        let centre = self.density_at_zero_with(sigma, ms[1], None)?;
        let g_minus = self.density_at_zero_with(stencil[0], ms[0], Some(centre.xi_limit))?.value;
        let g_plus = self.density_at_zero_with(stencil[2], ms[2], Some(centre.xi_limit))?.value;
        let gs = [g_minus, centre.value, g_plus];
        let a_ce: Vec<f64> = a_gce.iter().zip(&gs).map(|(a, g)| a + g.ln() / n as f64).collect();
        let (d1g, d2g) = central_differences(a_gce[0], a_gce[1], a_gce[2], h);
        let (d1c, d2c) = central_differences(a_ce[0], a_ce[1], a_ce[2], h);
        Ok(FreeEnergyReport::new(n, sigma, ms[1], (a_gce[1], d1g, d2g), (a_ce[1], d1c, d2c), centre.value))
    }

    /// Recomputes log partition, mean spin and total variance with twice the
    /// nodes and reports the largest change.
    pub fn refinement_check(&self, sigma: f64, tol: f64) -> Result<RefinementReport> {
        let refined = Self::with_options(&self.model, TransferOptions { nodes: 2 * self.opts.nodes, ..self.opts })?;
        let a = self.response_at(sigma);
        let b = refined.response_at(sigma);
        let changes = [
            ("log partition", (self.log_partition(sigma) - refined.log_partition(sigma)).abs()),
            ("mean spin", (a.mean_spin - b.mean_spin).abs()),
            ("total variance", (a.second_derivative - b.second_derivative).abs()),
        ];
        let (name, worst) = changes.iter().cloned().fold(("", 0.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if worst > tol {
            return Err(Error::GridNotConverged { quantity: name.to_string(), change: worst });
        }
        Ok(RefinementReport { nodes: self.opts.nodes, refined_nodes: refined.opts.nodes, max_change: worst })
    }
}

impl MeanSpinEngine for TransferEngine {
    fn response(&self, sigma: f64) -> Result<SpinResponse> {
        Ok(self.response_at(sigma))
    }
}

/// Numerator of `E[f g]`: a single block on the union if the supports
/// overlap, otherwise two blocks in one sweep.
fn pair_numerator(chain: &Chain<'_>, f: &LocalFunction, g: &LocalFunction, nodes: &[f64]) -> Result<Scaled> {
    if f.overlaps(g) {
        let fg = f.product(g)?;
        Ok(chain.blocks(&[&fg], nodes))
    } else {
        Ok(chain.blocks(&[f, g], nodes))
    }
}

#[cfg(test)]
mod tests;
