//! Variance, single-site moment and block fourth-moment bands over N and sigma.

use super::{num, Check, Context, EngineKind, Outcome, Table};
use crate::error::Result;
use crate::gaussian::GaussianModel;
use crate::model::ModelSpec;
use crate::par;
use crate::transfer::TransferEngine;

struct Cell {
    n: usize,
    sigma: f64,
    variance: f64,
    /// Largest `E|X_i - m_i|^k` over sites for k = 2, 4, 6.
    abs: [f64; 3],
    /// `(|A|, E(sum_A (X_i - m_i))^4)` per block size.
    blocks: Vec<(usize, f64)>,
}

fn block(n: usize, a: usize) -> std::ops::Range<usize> {
    let start = (n - a) / 2;
    start..start + a
}

fn cell(model: &ModelSpec, engine: EngineKind, sigma: f64, sizes: &[usize]) -> Result<Cell> {
    let n = model.n();
    let sizes: Vec<usize> = sizes.iter().copied().filter(|&a| a <= n).collect();
    match engine {
        EngineKind::Oracle => {
            let g = GaussianModel::new(model)?;
            let cov = g.covariance();
            let vmax = (0..n).map(|i| cov[(i, i)]).fold(0.0, f64::max);
            let blocks = sizes
                .iter()
                .map(|&a| {
                    let r = block(n, a);
                    let var: f64 = r.clone().flat_map(|i| r.clone().map(move |j| (i, j))).map(|(i, j)| cov[(i, j)]).sum();
                    (a, 3.0 * var * var)
                })
                .collect();
            Ok(Cell { n, sigma, variance: g.total_variance(), abs: [vmax, 3.0 * vmax * vmax, 15.0 * vmax.powi(3)], blocks })
        }
        _ => {
            let eng = TransferEngine::new(model)?;
            let worst = |k| eng.central_absolute_moments(sigma, k).into_iter().fold(0.0, f64::max);
            let blocks = sizes
                .iter()
                .map(|&a| Ok((a, eng.block_central_moments(sigma, block(n, a), 4)?[4])))
                .collect::<Result<_>>()?;
            Ok(Cell { n, sigma, variance: eng.total_variance(sigma), abs: [worst(2), worst(4), worst(6)], blocks })
        }
    }
}

pub(super) fn run(ctx: &Context) -> Result<Outcome> {
    let bands = ctx.bands();
    let mut keys = Vec::new();
    for &n in &ctx.n_list {
        for &s in &ctx.settings.sigma_grid {
            keys.push((n, s));
        }
    }
    let models: Vec<ModelSpec> = ctx.n_list.iter().map(|&n| ctx.sized(n)).collect::<Result<_>>()?;
    let cells: Vec<Cell> = par::map(&keys, |&(n, s)| {
        let idx = ctx.n_list.iter().position(|&k| k == n).expect("key from list");
        cell(&models[idx], ctx.engine, s, &ctx.settings.block_sizes)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut out = Outcome::default();
    let mut t = Table::new(&["n", "sigma", "var_density", "max_abs2", "max_abs4", "max_abs6"]);
    let mut bt = Table::new(&["n", "sigma", "block", "fourth", "fourth_over_block_sq"]);
    let (mut var_lo, mut var_hi, mut m4, mut b4, mut dbl) = (f64::INFINITY, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for c in &cells {
        t.row(&[c.n.to_string(), num(c.sigma), num(c.variance), num(c.abs[0]), num(c.abs[1]), num(c.abs[2])]);
        var_lo = var_lo.min(c.variance);
        var_hi = var_hi.max(c.variance);
        m4 = m4.max(c.abs[1]);
        for &(a, f4) in &c.blocks {
            bt.row(&[c.n.to_string(), num(c.sigma), a.to_string(), num(f4), num(f4 / (a * a) as f64)]);
            b4 = b4.max(f4 / (a * a) as f64);
            if let Some(&(_, f8)) = c.blocks.iter().find(|(b, _)| *b == 2 * a) {
                dbl = dbl.max(f8 / f4);
            }
        }
    }
    out.files.insert("moments.csv".into(), t.finish());
    out.files.insert("block_moments.csv".into(), bt.finish());
    out.checks.push(Check::within("min variance density", var_lo, bands.variance));
    out.checks.push(Check::within("max variance density", var_hi, bands.variance));
    out.checks.push(Check::within("max E|X_i - m_i|^4", m4, bands.moment4));
    out.checks.push(Check::within("max block fourth moment / |A|^2", b4, bands.block4));
    if dbl > 0.0 {
        out.checks.push(Check::at_most("block doubling fourth-moment ratio", dbl, bands.block_doubling_max));
    }
    Ok(out)
}
