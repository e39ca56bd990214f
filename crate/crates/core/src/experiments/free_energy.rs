//! Free energies of both ensembles and the derivative identities.

use super::{doubling_ratios, list, num, strictly_decreasing, Check, Context, EngineKind, Outcome, Table};
use crate::error::Result;
use crate::estimators::report::central_differences;
use crate::estimators::FreeEnergyReport;
use crate::gaussian::GaussianModel;
use crate::model::ModelSpec;
use crate::par;
use crate::transfer::{LocalFunction, TransferEngine, FD_STEP};

struct Cell {
    report: FreeEnergyReport,
    /// `(sigma, d2A_gce)` over the sigma grid.
    convexity: Vec<(f64, f64)>,
    /// `(|d1 - mean spin|, |d2 - var/N|, tilt residual, tilt passes)`, transfer only.
    identities: Option<(f64, f64, f64, bool)>,
}

fn cell(model: &ModelSpec, engine: EngineKind, m: f64, grid: &[f64]) -> Result<Cell> {
    let n = model.n();
    match engine {
        EngineKind::Oracle => {
            let g = GaussianModel::new(model)?;
            let sigma = g.sigma_of_m(m);
            let v = g.total_variance();
            let d1 = g.mean_spin(sigma);
            let report = FreeEnergyReport::new(
                n,
                sigma,
                d1,
                (g.free_energy_gce(sigma), d1, v),
                (g.free_energy_ce(sigma), d1, v),
                g.density_at_zero(),
            );
            Ok(Cell { report, convexity: grid.iter().map(|&s| (s, v)).collect(), identities: None })
        }
        _ => {
            let eng = TransferEngine::new(model)?;
            let sigma = eng.sigma_of_m(m)?;
            let report = eng.free_energy_report(sigma)?;
            let convexity = grid
                .iter()
                .map(|&s| {
                    let h = FD_STEP;
                    let (_, d2) = central_differences(eng.log_partition(s - h), eng.log_partition(s), eng.log_partition(s + h), h);
                    (s, d2)
                })
                .collect();
            let mid = n / 2;
            let f = LocalFunction::spin(mid);
            let g = LocalFunction::spin_power(mid + 1, m, 2);
            let tilt = eng.modified_tilt_check(sigma, &f, &g, FD_STEP)?;
            let identities = Some((
                (report.d1_gce - eng.mean_spin(sigma)).abs(),
                (report.d2_gce - eng.total_variance(sigma)).abs(),
                tilt.residual.abs(),
                tilt.passes(),
            ));
            Ok(Cell { report, convexity, identities })
        }
    }
}

pub(super) fn run(ctx: &Context) -> Result<Outcome> {
    let bands = ctx.bands();
    let models: Vec<ModelSpec> = ctx.n_list.iter().map(|&n| ctx.sized(n)).collect::<Result<_>>()?;
    let cells: Vec<Cell> = par::map(&models, |model| cell(model, ctx.engine, ctx.m, &ctx.settings.sigma_grid))
        .into_iter()
        .collect::<Result<_>>()?;

    let mut out = Outcome::default();
    let mut t = Table::new(&[
        "n", "sigma", "m", "a_gce", "a_ce", "d1_gce", "d1_ce", "d2_gce", "d2_ce", "g0", "gap_a", "gap_d1", "gap_d2", "n_gap_a",
    ]);
    let mut conv = Table::new(&["n", "sigma", "d2_a_gce"]);
    for c in &cells {
        let r = &c.report;
        t.row(&[
            r.n.to_string(),
            num(r.sigma),
            num(r.m),
            num(r.a_gce),
            num(r.a_ce),
            num(r.d1_gce),
            num(r.d1_ce),
            num(r.d2_gce),
            num(r.d2_ce),
            num(r.density_at_zero),
            num(r.gap_a),
            num(r.gap_d1),
            num(r.gap_d2),
            num(r.n as f64 * r.gap_a),
        ]);
        for &(s, d2) in &c.convexity {
            conv.row(&[r.n.to_string(), num(s), num(d2)]);
        }
        let worst = c.convexity.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        out.checks.push(Check::flag(
            format!("convexity N={}", r.n),
            worst > 0.0 && r.is_convex(),
            format!("min d2A over grid {worst:.6e}"),
        ));
        if let Some((e1, e2, tilt, passes)) = c.identities {
            out.checks.push(Check::at_most(format!("dA/dsigma = mean spin N={}", r.n), e1, bands.first_derivative));
            out.checks.push(Check::at_most(format!("d2A/dsigma2 = var/N N={}", r.n), e2, bands.second_derivative));
            out.checks.push(
                Check::at_most(format!("mixed tilt residual N={}", r.n), tilt, bands.tilt_residual)
                    .with_detail(format!("bound check {passes}")),
            );
        }
    }
    out.files.insert("free_energy.csv".into(), t.finish());
    out.files.insert("convexity.csv".into(), conv.finish());

    let ns: Vec<usize> = cells.iter().map(|c| c.report.n).collect();
    let gap_a: Vec<f64> = cells.iter().map(|c| c.report.gap_a).collect();
    let band = if ctx.engine == EngineKind::Oracle {
        bands.oracle_free_energy_ratio
    } else {
        bands.transfer_free_energy_ratio
    };
    let mut rt = Table::new(&["n", "gap_ratio"]);
    for (n, r) in doubling_ratios(&ns, &gap_a) {
        rt.row(&[n.to_string(), num(r)]);
        out.checks.push(Check::within(format!("free-energy gap ratio N={n}->{}", 2 * n), r, band));
    }
    out.files.insert("gap_ratio.csv".into(), rt.finish());

    let d1: Vec<f64> = cells.iter().map(|c| c.report.gap_d1).collect();
    let d2: Vec<f64> = cells.iter().map(|c| c.report.gap_d2).collect();
    if ctx.engine == EngineKind::Oracle {
        let worst = d1.iter().chain(&d2).cloned().fold(0.0, f64::max);
        out.checks.push(Check::at_most("Gaussian derivative gaps vanish", worst, 1e-12));
    } else {
        out.checks.push(Check::flag("first-derivative gap strictly decreasing", strictly_decreasing(&d1), list(&d1, 3)));
        out.checks.push(Check::flag("second-derivative gap strictly decreasing", strictly_decreasing(&d2), list(&d2, 3)));
    }
    Ok(out)
}
