mod common;

use canon_lattice::estimators::fit::{fit_decay, FitOutcome};
use canon_lattice::estimators::sigma::{sigma_of_m_general, EngineChoice};
use canon_lattice::estimators::{covariance_curve, CorrelationCurve, CurvePoint};
use canon_lattice::gaussian::GaussianModel;
use canon_lattice::samplers::{run_ce_chain, run_gce_chain, ChainConfig};
use canon_lattice::transfer::{TransferEngine, TransferOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn sampled_curves_match_the_oracle() {
    let model = common::reference_band(16);
    let g = GaussianModel::new(&model).unwrap();
    let sigma = g.sigma_of_m(0.3);
    let gce = g.gce_moments(sigma);
    let ce = g.condition(&gce, 0.3);
    let cfg = ChainConfig::new(21, 30_000, 1000);
    for (batch, exact) in [
        (run_gce_chain(&model, sigma, &cfg).unwrap(), &gce),
        (run_ce_chain(&model, 0.3, &cfg).unwrap(), &ce),
    ] {
        let curve = covariance_curve(&batch, 0).unwrap();
        assert_eq!(curve.len(), 16);
        let var = curve.at(0).unwrap();
        assert!(var.cov > 0.0);
        for p in &curve.points {
            let e = exact.cov[(0, p.d)];
            assert!((p.cov - e).abs() < 3.0 * p.se, "d={} {} +- {} vs {e}", p.d, p.cov, p.se);
        }
    }
}

#[test]
fn sampled_curves_respect_reflection() {
    // site i mirrors to 15 - i
    let model = common::reference(16);
    let batch = run_ce_chain(&model, 0.0, &ChainConfig::new(6, 30_000, 1000)).unwrap();
    let left = covariance_curve(&batch, 2).unwrap();
    let right = covariance_curve(&batch, 10).unwrap();
    let inner = covariance_curve(&batch, 13).unwrap();
    for (a, b) in [(left.at(3).unwrap(), right.at(3).unwrap()), (left.at(0).unwrap(), inner.at(0).unwrap())] {
        assert!((a.cov - b.cov).abs() < 3.0 * a.se.hypot(b.se), "{} vs {}", a.cov, b.cov);
    }
}

#[test]
fn oracle_sigma_round_trips() {
    let model = common::reference_band(32);
    let g = GaussianModel::new(&model).unwrap();
    let mut last = f64::NEG_INFINITY;
    for k in -10..=10 {
        let m = 0.15 * k as f64;
        let s = sigma_of_m_general(&model, m, &EngineChoice::Oracle).unwrap();
        assert!((g.mean_spin(s) - m).abs() < 1e-8);
        assert!(s > last);
        last = s;
    }
    let s0 = sigma_of_m_general(&model, g.mean_spin(0.0), &EngineChoice::Oracle).unwrap();
    assert!(s0.abs() < 1e-8);
}

#[test]
fn transfer_sigma_reproduces_the_mean_spin() {
    let model = common::reference_nn(32);
    let choice = EngineChoice::Transfer(TransferOptions::default());
    let s = sigma_of_m_general(&model, 0.5, &choice).unwrap();
    let m = TransferEngine::new(&model).unwrap().mean_spin(s);
    assert!((m - 0.5).abs() < 1e-6, "{m}");
    let lower = sigma_of_m_general(&model, 0.2, &choice).unwrap();
    assert!(lower < s);
}

#[test]
fn noisy_decay_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let points = (0..40)
        .map(|d| {
            let exact = 0.5 * (-0.4 * d as f64).exp() + 0.01;
            let se = 0.01 * exact.abs();
            let noise = Normal::new(0.0, se).unwrap().sample(&mut rng);
            CurvePoint { d, cov: exact + noise, se, n: 1000 }
        })
        .collect();
    let fit = fit_decay(&CorrelationCurve::new(points).unwrap());
    let f = fit.fit().expect("a fit");
    assert!((f.rate - 0.4).abs() < 0.04, "{}", f.rate);
    assert!((f.plateau - 0.01).abs() < 0.001, "{}", f.plateau);
}

#[test]
fn oracle_curves_separate_the_plateaus() {
    let model = common::reference_band(64);
    let g = GaussianModel::new(&model).unwrap();
    let gce = g.gce_moments(0.0);
    let ce = g.condition(&gce, g.mean_spin(0.0));
    let a = 16;
    let row = |c: &nalgebra::DMatrix<f64>| (a..64).map(|j| c[(a, j)]).collect::<Vec<_>>();
    let fit = |v: Vec<f64>| match fit_decay(&CorrelationCurve::exact(&v)) {
        FitOutcome::Fit(f) => f,
        FitOutcome::NoFit { reason } => panic!("{reason}"),
    };
    let (fg, fc) = (fit(row(&gce.cov)), fit(row(&ce.cov)));
    assert!(fg.plateau.abs() < 1e-6, "{}", fg.plateau);
    assert!(fc.plateau < 0.0);
    // c' / N with c' the full-chain variance density
    let guess = -g.total_variance() / 64.0;
    assert!((fc.plateau / guess - 1.0).abs() < 0.2, "{} vs {guess}", fc.plateau);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_sigma_is_increasing(m1 in -2.0f64..2.0, dm in 0.01f64..1.0, c in -0.2f64..0.2) {
        let model = canon_lattice::ModelSpec::translation_invariant(canon_lattice::Potential::Zero, &[c], 0.5, 12).unwrap();
        let a = sigma_of_m_general(&model, m1, &EngineChoice::Oracle).unwrap();
        let b = sigma_of_m_general(&model, m1 + dm, &EngineChoice::Oracle).unwrap();
        prop_assert!(b > a);
    }

    #[test]
    fn exact_curves_accept_any_values(v in proptest::collection::vec(-1.0f64..1.0, 1..30)) {
        let c = CorrelationCurve::exact(&v);
        prop_assert_eq!(c.len(), v.len());
        prop_assert!(c.points.iter().all(|p| p.se > 0.0));
    }
}
