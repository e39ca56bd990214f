//! Gap between gce and ce expectations of a local observable as N grows.

use super::{list, num, strictly_decreasing, Check, Context, EngineKind, Observable, Outcome, Table};
use crate::error::Result;
use crate::estimators::fit::linear_fit;
use crate::gaussian::GaussianModel;
use crate::model::ModelSpec;
use crate::par;
use crate::transfer::{LocalFunction, TransferEngine};

struct Row {
    n: usize,
    sigma: f64,
    gce: f64,
    ce: f64,
    linear_gap: f64,
}

/// `E[(X - m)^p]` for `X ~ N(mu, v)`, `p <= 3`.
fn gaussian_centered_moment(mu: f64, v: f64, m: f64, p: i32) -> f64 {
    let d = mu - m;
    match p {
        0 => 1.0,
        1 => d,
        2 => d * d + v,
        _ => d * d * d + 3.0 * d * v,
    }
}

fn power(obs: Observable) -> i32 {
    match obs {
        Observable::CubedMidpoint => 3,
        Observable::Midpoint => 1,
        Observable::One => 0,
    }
}

fn cell(model: &ModelSpec, engine: EngineKind, obs: Observable, m: f64) -> Result<Row> {
    let n = model.n();
    let mid = n / 2;
    let p = power(obs);
    match engine {
        EngineKind::Oracle => {
            let g = GaussianModel::new(model)?;
            let sigma = g.sigma_of_m(m);
            let gce = g.gce_moments(sigma);
            let ce = g.condition(&gce, m);
            let e = |mom: &crate::gaussian::GaussianMoments, p| {
                gaussian_centered_moment(mom.mean[mid], mom.cov[(mid, mid)], m, p)
            };
            Ok(Row {
                n,
                sigma,
                gce: e(&gce, p),
                ce: e(&ce, p),
                linear_gap: (gce.mean[mid] - ce.mean[mid]).abs(),
            })
        }
        _ => {
            let eng = TransferEngine::new(model)?;
            let sigma = eng.sigma_of_m(m)?;
            let f = match obs {
                Observable::One => LocalFunction::constant(mid, 1.0),
                _ => LocalFunction::spin_power(mid, m, p),
            };
            let x = LocalFunction::spin(mid);
            let gce = eng.gce_stats(sigma, &[f.clone(), x.clone()])?;
            let ce = eng.ce_expectations(m, &[f, x])?;
            Ok(Row { n, sigma, gce: gce.means[0], ce: ce[0], linear_gap: (gce.means[1] - ce[1]).abs() })
        }
    }
}

pub(super) fn run(ctx: &Context) -> Result<Outcome> {
    let bands = ctx.bands();
    let obs = ctx.settings.observable;
    let models: Vec<ModelSpec> = ctx.n_list.iter().map(|&n| ctx.sized(n)).collect::<Result<_>>()?;
    let rows: Vec<Row> = par::map(&models, |model| cell(model, ctx.engine, obs, ctx.m)).into_iter().collect::<Result<_>>()?;

    let mut out = Outcome::default();
    let mut t = Table::new(&["n", "sigma", "e_gce", "e_ce", "gap", "linear_gap"]);
    for r in &rows {
        t.row(&[r.n.to_string(), num(r.sigma), num(r.gce), num(r.ce), num((r.gce - r.ce).abs()), num(r.linear_gap)]);
    }
    out.files.insert("observable_gaps.csv".into(), t.finish());

    let gaps: Vec<f64> = rows.iter().map(|r| (r.gce - r.ce).abs()).collect();
    if obs == Observable::One {
        let worst = gaps.iter().cloned().fold(0.0, f64::max);
        out.checks.push(Check::at_most("constant observable gap", worst, 1e-12));
        return Ok(out);
    }
    if ctx.engine == EngineKind::Oracle {
        let worst = rows.iter().map(|r| r.linear_gap).fold(0.0, f64::max);
        out.checks.push(Check::at_most("Gaussian linear observable gap", worst, bands.linear_gap));
    }
    if gaps.iter().all(|&g| g <= 1e-12) {
        out.notes.push("all gaps below 1e-12; trend checks are vacuous".into());
        out.checks.push(Check::at_most("gaps vanish", gaps.iter().cloned().fold(0.0, f64::max), 1e-12));
        return Ok(out);
    }
    out.checks.push(Check::flag(
        "gaps strictly decreasing",
        strictly_decreasing(&gaps),
        list(&gaps, 3),
    ));
    if rows.len() >= 2 {
        let ln_n: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let ln_g: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
        let slope = linear_fit(&ln_n, &ln_g).slope;
        out.checks.push(Check::at_most("log-log slope", slope, bands.observable_slope_max));
    }
    Ok(out)
}
