//! Gaussian closed-form checks: symmetric identity, rank-1 conditioning,
//! gce decay and the 1/N ce plateau.

use super::{doubling_ratios, num, Check, Context, Outcome, Table};
use crate::error::Result;
use crate::estimators::fit::{fit_decay, linear_fit, FitOutcome};
use crate::estimators::CorrelationCurve;
use crate::gaussian::GaussianModel;
use crate::model::{ModelSpec, Potential};
use crate::par;

/// `(cov_ce(0,1), var_ce(0))` for independent unit spins at window size `n`.
pub fn symmetric_identity(n: usize, m: f64) -> Result<(f64, f64)> {
    let model = ModelSpec::translation_invariant(Potential::Zero, &[0.0], 0.5, n)?;
    let ce = GaussianModel::new(&model)?.ce_moments(m);
    Ok((ce.cov[(0, 1)], ce.cov[(0, 0)]))
}

struct Cell {
    n: usize,
    rank_one: f64,
    plateau: f64,
    loglinear_rate: f64,
    loglinear_rel: f64,
    gce_fit: FitOutcome,
    ce_fit: FitOutcome,
    gce_curve: CorrelationCurve,
    ce_curve: CorrelationCurve,
}

fn cell(model: &ModelSpec, m: f64) -> Result<Cell> {
    let n = model.n();
    let g = GaussianModel::new(model)?;
    let sigma = g.sigma_of_m(m);
    let gce = g.gce_moments(sigma);
    let ce = g.condition(&gce, m);
    let projected = g.ce_covariance_projected()?;
    let rank_one = (&ce.cov - &projected).amax();

    let ds: Vec<f64> = (1..=n / 2).map(|d| d as f64).collect();
    let ln_cov: Vec<f64> = (1..=n / 2).map(|d| gce.cov[(0, d)].abs().ln()).collect();
    let line = linear_fit(&ds, &ln_cov);

    let a = n / 4;
    let gce_curve = CorrelationCurve::exact(&(a..n).map(|j| gce.cov[(a, j)]).collect::<Vec<_>>());
    let ce_curve = CorrelationCurve::exact(&(a..n).map(|j| ce.cov[(a, j)]).collect::<Vec<_>>());
    Ok(Cell {
        n,
        rank_one,
        plateau: ce.cov[(a, 3 * n / 4)],
        loglinear_rate: -line.slope,
        loglinear_rel: line.relative_residual(),
        gce_fit: fit_decay(&gce_curve),
        ce_fit: fit_decay(&ce_curve),
        gce_curve,
        ce_curve,
    })
}

pub(super) fn run(ctx: &Context) -> Result<Outcome> {
    let bands = ctx.bands();
    let mut out = Outcome::default();

    let (c01, var) = symmetric_identity(4, ctx.m)?;
    let mut t = Table::new(&["n", "cov_01", "var_0", "minus_var_over_n_minus_1"]);
    t.row(&["4".into(), num(c01), num(var), num(-var / 3.0)]);
    out.files.insert("symmetric.csv".into(), t.finish());
    out.checks.push(Check::at_most("symmetric cov_ce(1,2) = -1/4", (c01 + 0.25).abs(), bands.symmetric));
    out.checks.push(Check::at_most("symmetric cov = -var/(N-1)", (c01 + var / 3.0).abs(), bands.symmetric));

    let models: Vec<ModelSpec> = ctx.n_list.iter().map(|&n| ctx.sized(n)).collect::<Result<_>>()?;
    let cells: Vec<Cell> = par::map(&models, |model| cell(model, ctx.m)).into_iter().collect::<Result<_>>()?;

    let mut rank = Table::new(&["n", "rank_one_residual"]);
    let mut decay = Table::new(&["n", "rate", "relative_residual"]);
    let mut plateau = Table::new(&["n", "plateau", "ce_fit_plateau", "gce_fit_plateau"]);
    for c in &cells {
        rank.row(&[c.n.to_string(), num(c.rank_one)]);
        decay.row(&[c.n.to_string(), num(c.loglinear_rate), num(c.loglinear_rel)]);
        let p = |f: &FitOutcome| f.fit().map_or(String::new(), |f| num(f.plateau));
        plateau.row(&[c.n.to_string(), num(c.plateau), p(&c.ce_fit), p(&c.gce_fit)]);
        out.files.insert(format!("gce_curve_n{}.csv", c.n), c.gce_curve.to_csv());
        out.files.insert(format!("ce_curve_n{}.csv", c.n), c.ce_curve.to_csv());
        out.files.insert(format!("gce_fit_n{}.csv", c.n), c.gce_fit.to_csv());
        out.files.insert(format!("ce_fit_n{}.csv", c.n), c.ce_fit.to_csv());

        out.checks.push(Check::at_most(format!("rank-1 residual N={}", c.n), c.rank_one, bands.rank_one));
        out.checks.push(Check::flag(
            format!("ce plateau negative N={}", c.n),
            c.plateau < 0.0,
            format!("plateau {:.6e}", c.plateau),
        ));
    }
    // Decay is judged on the largest window, where the edge is furthest from
    // the fitted range; smaller windows are reported only.
    if let Some(c) = cells.iter().max_by_key(|c| c.n) {
        out.checks.push(Check::at_least(format!("gce decay rate N={}", c.n), c.loglinear_rate, bands.decay_rate_min));
        out.checks.push(Check::at_most(
            format!("gce decay fit residual N={}", c.n),
            c.loglinear_rel,
            bands.decay_residual,
        ));
    }
    out.files.insert("rank_one.csv".into(), rank.finish());
    out.files.insert("gce_decay.csv".into(), decay.finish());
    out.files.insert("plateau.csv".into(), plateau.finish());

    let ns: Vec<usize> = cells.iter().map(|c| c.n).collect();
    let ps: Vec<f64> = cells.iter().map(|c| c.plateau.abs()).collect();
    let ratios = doubling_ratios(&ns, &ps);
    if ratios.is_empty() {
        out.notes.push("no N doubling in the list; plateau ratio not checked".into());
    }
    let mut rt = Table::new(&["n", "plateau_ratio"]);
    for (n, r) in ratios {
        rt.row(&[n.to_string(), num(r)]);
        out.checks.push(Check::within(format!("plateau ratio N={n}->{}", 2 * n), r, bands.plateau_ratio));
    }
    out.files.insert("plateau_ratio.csv".into(), rt.finish());
    Ok(out)
}
