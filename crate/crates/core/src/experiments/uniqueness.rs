//! Boundary sensitivity of the centre spin under the canonical ensemble.

use super::{list, num, strictly_decreasing, Check, Context, EngineKind, Outcome, Table};
use crate::error::Result;
use crate::estimators::fit::linear_fit;
use crate::estimators::mean_with_error;
use crate::gaussian::GaussianModel;
use crate::model::ModelSpec;
use crate::par;
use crate::samplers::two_boundary_ce_pair;

/// Window of radius `r` around the centre with both boundaries at `y` or `z`.
fn windows(ctx: &Context, r: usize, y: f64, z: f64) -> Result<(ModelSpec, ModelSpec)> {
    let base = ctx.sized(2 * r - 1)?;
    let k = base.range();
    Ok((base.with_boundary(vec![y; k], vec![y; k])?, base.with_boundary(vec![z; k], vec![z; k])?))
}

fn oracle_delta(ctx: &Context, r: usize, y: f64, z: f64) -> Result<f64> {
    let (my, mz) = windows(ctx, r, y, z)?;
    let c = r - 1;
    let ey = GaussianModel::new(&my)?.ce_moments(ctx.m).mean[c];
    let ez = GaussianModel::new(&mz)?.ce_moments(ctx.m).mean[c];
    Ok((ey - ez).abs())
}

pub(super) fn run(ctx: &Context) -> Result<Outcome> {
    let bands = ctx.bands();
    let b = ctx.settings.boundary_value;
    let mut out = Outcome::default();
    match ctx.engine {
        EngineKind::Oracle => {
            let rs = ctx.settings.r_list.clone().unwrap_or_else(|| vec![4, 8, 16, 32]);
            let deltas: Vec<f64> =
                par::map(&rs, |&r| oracle_delta(ctx, r, b, -b)).into_iter().collect::<Result<_>>()?;
            let same = oracle_delta(ctx, rs[0], b, b)?;
            let mut t = Table::new(&["r", "delta"]);
            for (r, d) in rs.iter().zip(&deltas) {
                t.row(&[r.to_string(), num(*d)]);
            }
            out.files.insert("uniqueness.csv".into(), t.finish());

            let (lo, hi) = (rs.iter().min().copied().unwrap_or(4), rs.iter().max().copied().unwrap_or(32));
            let dense: Vec<usize> = (lo..=hi).collect();
            let dd: Vec<f64> = par::map(&dense, |&r| oracle_delta(ctx, r, b, -b)).into_iter().collect::<Result<_>>()?;
            let mut dt = Table::new(&["r", "delta"]);
            for (r, d) in dense.iter().zip(&dd) {
                dt.row(&[r.to_string(), num(*d)]);
            }
            out.files.insert("uniqueness_dense.csv".into(), dt.finish());
            let x: Vec<f64> = dense.iter().map(|&r| r as f64).collect();
            let y: Vec<f64> = dd.iter().map(|d| d.ln()).collect();
            let rate = -linear_fit(&x, &y).slope;

            out.checks.push(Check::at_most("identical boundaries give no difference", same, 1e-12));
            out.checks.push(Check::flag("boundary sensitivity strictly decreasing", strictly_decreasing(&deltas), list(&deltas, 4)));
            out.checks.push(Check::positive("fitted exponential rate", rate));
        }
        _ => {
            let rs = ctx.settings.r_list.clone().unwrap_or_else(|| vec![4, 8, 16]);
            let rows: Vec<(usize, f64, f64)> = par::map(&rs, |&r| -> Result<(usize, f64, f64)> {
                let (my, mz) = windows(ctx, r, b, -b)?;
                let (by, bz) = two_boundary_ce_pair(&my, &mz, ctx.m, &ctx.chain(&format!("r={r}")))?;
                let c = r - 1;
                let ey = mean_with_error(&by.site_series(c))?;
                let ez = mean_with_error(&bz.site_series(c))?;
                Ok((r, (ey.mean - ez.mean).abs(), ey.standard_error.hypot(ez.standard_error)))
            })
            .into_iter()
            .collect::<Result<_>>()?;
            let mut t = Table::new(&["r", "delta", "se"]);
            for (r, d, se) in &rows {
                t.row(&[r.to_string(), num(*d), num(*se)]);
            }
            out.files.insert("uniqueness.csv".into(), t.finish());

            let k = bands.se_multiple;
            let resolvable = rows.iter().take_while(|(_, d, se)| *d > k * se).count();
            if resolvable < rows.len() {
                out.notes.push(format!(
                    "noise floor reached at r = {}",
                    rows[resolvable].0
                ));
            }
            let (r0, d0, s0) = rows[0];
            let (r1, d1, s1) = rows[rows.len() - 1];
            let margin = d0 - d1 - k * s0.hypot(s1);
            out.checks.push(
                Check::positive(format!("decrease r={r0} -> r={r1} beyond noise"), margin)
                    .with_detail(format!("delta {d0:.4} +- {s0:.4} vs {d1:.4} +- {s1:.4}")),
            );
        }
    }
    Ok(out)
}
