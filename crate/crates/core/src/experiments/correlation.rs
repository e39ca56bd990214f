//! Two-point functions in both ensembles: the fixed-distance gap and the
//! decay fits of whole covariance curves.

use super::{doubling_ratios, list, num, strictly_decreasing, Check, Context, EngineKind, Outcome, Table};
use crate::error::Result;
use crate::estimators::fit::{fit_decay, FitOutcome};
use crate::estimators::curve::EXACT_SE;
use crate::estimators::CorrelationCurve;
use crate::gaussian::GaussianModel;
use crate::model::ModelSpec;
use crate::par;
use crate::transfer::{LocalFunction, TransferEngine};

/// Absolute accuracy of transfer-engine covariances at the default grid.
const TRANSFER_FLOOR: f64 = 1e-10;

struct Cell {
    n: usize,
    gap: f64,
    var_gap: f64,
    far_gce: f64,
    gce_curve: CorrelationCurve,
    ce_curve: CorrelationCurve,
    gce_fit: FitOutcome,
    ce_fit: FitOutcome,
}

fn cell(model: &ModelSpec, engine: EngineKind, distance: usize, m: f64) -> Result<Cell> {
    let n = model.n();
    let a = n / 4;
    let mid = n / 2;
    let j = (mid + distance).min(n - 1);
    let (gap, var_gap, far_gce, gce_row, ce_row) = match engine {
        EngineKind::Oracle => {
            let g = GaussianModel::new(model)?;
            let gce = g.gce_moments(g.sigma_of_m(m));
            let ce = g.condition(&gce, m);
            (
                (ce.cov[(mid, j)] - gce.cov[(mid, j)]).abs(),
                (ce.cov[(mid, mid)] - gce.cov[(mid, mid)]).abs(),
                gce.cov[(a, a + n / 2)].abs(),
                (a..n).map(|k| gce.cov[(a, k)]).collect::<Vec<_>>(),
                (a..n).map(|k| ce.cov[(a, k)]).collect::<Vec<_>>(),
            )
        }
        _ => {
            let eng = TransferEngine::new(model)?;
            let sigma = eng.sigma_of_m(m)?;
            let (f, g) = (LocalFunction::spin(mid), LocalFunction::spin(j));
            let gs = eng.gce_stats(sigma, &[f.clone(), g.clone()])?;
            let ce_fg = eng.ce_covariance(m, &f, &g)?;
            let ce_ff = eng.ce_covariance(m, &f, &f)?;
            let gce_row = eng.spin_covariance_row(sigma, a)?;
            let ce_row = eng.ce_spin_row(m, a)?.covariances;
            (
                (ce_fg - gs.covariances[0][1]).abs(),
                (ce_ff - gs.covariances[0][0]).abs(),
                gce_row[n / 2].abs(),
                gce_row,
                ce_row,
            )
        }
    };
    let floor = if engine == EngineKind::Oracle { EXACT_SE } else { TRANSFER_FLOOR };
    let gce_curve = CorrelationCurve::exact_with_floor(&gce_row, floor);
    let ce_curve = CorrelationCurve::exact_with_floor(&ce_row, floor);
    Ok(Cell {
        n,
        gap,
        var_gap,
        far_gce,
        gce_fit: fit_decay(&gce_curve),
        ce_fit: fit_decay(&ce_curve),
        gce_curve,
        ce_curve,
    })
}

pub(super) fn run(ctx: &Context) -> Result<Outcome> {
    let bands = ctx.bands();
    let models: Vec<ModelSpec> = ctx.n_list.iter().map(|&n| ctx.sized(n)).collect::<Result<_>>()?;
    let cells: Vec<Cell> = par::map(&models, |model| cell(model, ctx.engine, ctx.settings.distance, ctx.m))
        .into_iter()
        .collect::<Result<_>>()?;

    let mut out = Outcome::default();
    let mut t = Table::new(&["n", "gap", "var_gap", "far_gce", "gce_plateau", "ce_plateau", "ce_rate"]);
    let mut ce_plateaus = Vec::new();
    for c in &cells {
        let fit = |f: &FitOutcome, g: fn(&crate::estimators::DecayFit) -> f64| f.fit().map_or(String::new(), |f| num(g(f)));
        t.row(&[
            c.n.to_string(),
            num(c.gap),
            num(c.var_gap),
            num(c.far_gce),
            fit(&c.gce_fit, |f| f.plateau),
            fit(&c.ce_fit, |f| f.plateau),
            fit(&c.ce_fit, |f| f.rate),
        ]);
        out.files.insert(format!("gce_curve_n{}.csv", c.n), c.gce_curve.to_csv());
        out.files.insert(format!("ce_curve_n{}.csv", c.n), c.ce_curve.to_csv());
        out.files.insert(format!("ce_fit_n{}.csv", c.n), c.ce_fit.to_csv());
        out.files.insert(format!("gce_fit_n{}.csv", c.n), c.gce_fit.to_csv());

        match (c.gce_fit.fit(), c.ce_fit.fit()) {
            (Some(g), Some(f)) => {
                out.checks.push(Check::flag(
                    format!("ce plateau negative N={}", c.n),
                    f.plateau < 0.0,
                    format!("{:.6e}", f.plateau),
                ));
                out.checks.push(
                    Check::at_most(format!("gce plateau ~ 0 N={}", c.n), g.plateau.abs(), 0.1 * f.plateau.abs())
                        .with_detail("bound is 10% of the ce plateau"),
                );
                ce_plateaus.push(f.plateau.abs());
            }
            (g, f) => {
                out.checks.push(Check::flag(
                    format!("decay fits N={}", c.n),
                    false,
                    format!("gce fit {}, ce fit {}", g.is_some(), f.is_some()),
                ));
                ce_plateaus.push(f64::NAN);
            }
        }
        if ctx.engine == EngineKind::Oracle && c.n >= 64 {
            out.checks.push(Check::at_most(format!("far gce covariance N={}", c.n), c.far_gce, bands.far_covariance));
        }
    }
    out.files.insert("correlation_gaps.csv".into(), t.finish());

    let gaps: Vec<f64> = cells.iter().map(|c| c.gap).collect();
    let var_gaps: Vec<f64> = cells.iter().map(|c| c.var_gap).collect();
    out.checks.push(Check::flag("fixed-distance gap strictly decreasing", strictly_decreasing(&gaps), list(&gaps, 3)));
    out.checks.push(Check::flag("variance gap strictly decreasing", strictly_decreasing(&var_gaps), list(&var_gaps, 3)));
    let ns: Vec<usize> = cells.iter().map(|c| c.n).collect();
    for (n, r) in doubling_ratios(&ns, &ce_plateaus) {
        out.checks.push(Check::within(format!("ce plateau ratio N={n}->{}", 2 * n), r, bands.correlation_ratio));
    }
    Ok(out)
}
