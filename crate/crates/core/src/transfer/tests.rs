use super::*;
use crate::model::Potential;

fn gaussian_nn(c: f64, n: usize) -> ModelSpec {
    ModelSpec::translation_invariant(Potential::Zero, &[c], 0.3, n).unwrap()
}

fn double_well(n: usize) -> ModelSpec {
    ModelSpec::translation_invariant(Potential::Cosine { beta: 1.0, omega: 1.0 }, &[-0.15], 0.5, n).unwrap()
}

fn with_boundary(model: &ModelSpec) -> ModelSpec {
    let mut cfg = model.config().clone();
    cfg.window.boundary_left = vec![1.5];
    cfg.window.boundary_right = vec![-0.5];
    cfg.window.field = (0..cfg.window.n).map(|i| 0.1 * (i as f64) - 0.3).collect();
    ModelSpec::from_config(cfg).unwrap()
}

#[test]
fn gaussian_gce_matches_oracle() {
    let model = with_boundary(&gaussian_nn(-0.3, 8));
    let eng = TransferEngine::new(&model).unwrap();
    let oracle = GaussianModel::new(&model).unwrap();
    let mom = oracle.gce_moments(0.5);
    let obs: Vec<LocalFunction> = (0..8).map(LocalFunction::spin).collect();
    let stats = eng.gce_stats(0.5, &obs).unwrap();
    for i in 0..8 {
        assert!((stats.means[i] - mom.mean[i]).abs() < 1e-6);
        for j in 0..8 {
            assert!((stats.covariances[i][j] - mom.cov[(i, j)]).abs() < 1e-6, "({i},{j})");
        }
    }
    assert!((stats.log_partition - oracle.free_energy_gce(0.5)).abs() < 1e-8);
    let row = eng.spin_covariance_row(0.5, 2).unwrap();
    for (d, c) in row.iter().enumerate() {
        assert!((c - mom.cov[(2, 2 + d)]).abs() < 1e-8);
    }
    assert!(stats.covariances[3][3] > 0.0);
    assert!(stats.covariances[0][7].abs() < stats.covariances[0][3].abs());
}

#[test]
fn left_and_right_blocks_agree() {
    // Block contraction and the anchored sweep are separate code paths.
    let eng = TransferEngine::new(&with_boundary(&double_well(7))).unwrap();
    let f = LocalFunction::new(1, 2, "x1*x2^2", |x| x[0] * x[1] * x[1]).unwrap();
    let g = LocalFunction::spin_power(5, 0.2, 3);
    let joint = eng.expectation_of_product(0.4, &[&f, &g]).unwrap();
    let fg = LocalFunction::new(1, 4, "x1 x2^2 (x4)...", |x| x[0] * x[1] * x[1]).unwrap();
    let s = eng.gce_stats(0.4, &[f.clone(), g.clone(), fg]).unwrap();
    assert!((joint - (s.covariances[0][1] + s.means[0] * s.means[1])).abs() < 1e-12);
    assert!((s.means[0] - s.means[2]).abs() < 1e-12);
    let spins: Vec<LocalFunction> = (0..7).map(LocalFunction::spin).collect();
    let st = eng.gce_stats(0.4, &spins).unwrap();
    let row = eng.spin_covariance_row(0.4, 1).unwrap();
    for (d, c) in row.iter().enumerate() {
        assert!((c - st.covariances[1][1 + d]).abs() < 1e-12);
    }
}

#[test]
fn characteristic_function_values() {
    let eng = TransferEngine::new(&gaussian_nn(0.0, 6)).unwrap();
    let one = eng.characteristic_fn(0.4, 0.4, 0.0);
    assert!((one - C64::new(1.0, 0.0)).norm() < 1e-14);
    for xi in [0.5, 1.0, 2.5] {
        let phi = eng.characteristic_fn(0.4, 0.4, xi);
        assert!((phi - C64::new((-0.5 * xi * xi).exp(), 0.0)).norm() < 1e-10, "xi={xi}: {phi}");
    }
    for n in [16, 32] {
        let eng = TransferEngine::new(&double_well(n)).unwrap();
        let sigma = eng.sigma_of_m(0.3).unwrap();
        assert!(eng.characteristic_fn(sigma, 0.3, 8.0).norm() < 1e-6);
    }
}

#[test]
fn density_at_zero_values() {
    let eng = TransferEngine::new(&gaussian_nn(0.0, 5)).unwrap();
    assert!((eng.density_at_zero(0.0, 0.0).unwrap() - 0.398_942_3).abs() < 1e-6);

    let model = gaussian_nn(-0.3, 16);
    let eng = TransferEngine::new(&model).unwrap();
    let oracle = GaussianModel::new(&model).unwrap();
    let sigma = oracle.sigma_of_m(0.2);
    assert!((eng.density_at_zero(sigma, 0.2).unwrap() - oracle.density_at_zero()).abs() < 1e-6);

    for n in [16, 32, 64] {
        let eng = TransferEngine::new(&double_well(n)).unwrap();
        let sigma = eng.sigma_of_m(0.3).unwrap();
        let g = eng.density_at_zero(sigma, 0.3).unwrap();
        assert!((0.1..=4.0).contains(&g), "N={n}: {g}");
    }
}

#[test]
fn canonical_expectations_match_oracle() {
    let model = with_boundary(&gaussian_nn(-0.3, 10));
    let eng = TransferEngine::new(&model).unwrap();
    let oracle = GaussianModel::new(&model).unwrap();
    let ce = oracle.ce_moments(0.3);
    let spins: Vec<LocalFunction> = (0..10).map(LocalFunction::spin).collect();
    let means = eng.ce_expectations(0.3, &spins).unwrap();
    for (i, m) in means.iter().enumerate() {
        assert!((m - ce.mean[i]).abs() < 1e-6, "site {i}");
    }
    assert!((means.iter().sum::<f64>() / 10.0 - 0.3).abs() < 1e-8);
    assert!((eng.ce_expectation(0.3, &LocalFunction::constant(4, 1.0)).unwrap() - 1.0).abs() < 1e-12);

    let row = eng.ce_spin_row(0.3, 0).unwrap();
    for d in 0..10 {
        assert!((row.covariances[d] - ce.cov[(0, d)]).abs() < 1e-6);
    }
    assert!(row.covariances.iter().sum::<f64>().abs() < 1e-6);
    let c = eng.ce_covariance(0.3, &spins[2], &spins[6]).unwrap();
    assert!((c - ce.cov[(2, 6)]).abs() < 1e-6);
    let v = eng.ce_covariance(0.3, &spins[3], &spins[3]).unwrap();
    assert!(v >= 0.0 && (v - ce.cov[(3, 3)]).abs() < 1e-6);
}

#[test]
fn free_energy_identities() {
    let eng = TransferEngine::new(&gaussian_nn(0.0, 6)).unwrap();
    let r = eng.free_energy_report(0.3).unwrap();
    assert!((r.a_ce - r.a_gce + 0.918_938_5 / 6.0).abs() < 1e-6);

    let eng = TransferEngine::new(&double_well(12)).unwrap();
    let r = eng.free_energy_report(0.2).unwrap();
    assert!((r.d1_gce - eng.mean_spin(0.2)).abs() < 1e-5);
    assert!((r.d2_gce - eng.total_variance(0.2)).abs() < 1e-4);
    assert!(r.is_convex());
    let g = eng.density_at_zero(0.2, r.m).unwrap();
    assert!((r.a_ce - r.a_gce - g.ln() / 12.0).abs() < 1e-12);
}

#[test]
fn modified_tilts() {
    let model = gaussian_nn(-0.3, 8);
    let eng = TransferEngine::new(&model).unwrap();
    let oracle = GaussianModel::new(&model).unwrap();
    let x = LocalFunction::spin(3);
    let check = eng.modified_tilt_check(0.4, &x, &x, 1e-3).unwrap();
    assert!(check.passes(), "{check:?}");
    assert!((check.residual).abs() <= 1e-5);
    let var = eng.gce_stats(0.4, std::slice::from_ref(&x)).unwrap().covariances[0][0];
    assert!((var - oracle.covariance()[(3, 3)]).abs() < 1e-6);
    assert!(check.untilted_gap < 1e-14);
    assert!(check.first_derivative_residual < 1e-6);

    let eng = TransferEngine::new(&double_well(8)).unwrap();
    let f = LocalFunction::spin_power(2, 0.0, 3);
    let g = LocalFunction::new(4, 2, "x4 x5", |x| x[0] * x[1]).unwrap();
    let check = eng.modified_tilt_check(0.1, &f, &g, 1e-3).unwrap();
    assert!(check.passes(), "{check:?}");
    assert!(eng.modified_tilt_check(0.1, &f, &g, 0.5).is_err());
}

#[test]
fn kernel_positivity() {
    let eng = TransferEngine::new(&double_well(5)).unwrap();
    assert!(eng.kernel(0.7, None).is_positive());
    assert!(!eng.kernel(0.7, Some((1.0, 0.0))).is_positive());
    assert_eq!(eng.distinct_bonds(), 1);
}

#[test]
fn grid_refinement_is_stable() {
    for sigma in [-2.0, 0.0, 2.0] {
        let eng = TransferEngine::new(&double_well(16)).unwrap();
        let r = eng.refinement_check(sigma, 1e-6).unwrap();
        assert!(r.max_change < 1e-6);
    }
    let eng = TransferEngine::new(
        &ModelSpec::translation_invariant(Potential::GaussianBump { beta: 1.5, width: 0.7 }, &[-0.2], 0.5, 12).unwrap(),
    )
    .unwrap();
    assert!(eng.refinement_check(1.0, 1e-6).is_ok());
}

#[test]
fn sigma_solver_round_trip() {
    let eng = TransferEngine::new(&double_well(12)).unwrap();
    let s = eng.sigma_of_m(0.5).unwrap();
    assert!((eng.mean_spin(s) - 0.5).abs() < 1e-6);
    let mut last = f64::NEG_INFINITY;
    for m in [-0.5, 0.0, 0.3, 0.9] {
        let s = eng.sigma_of_m(m).unwrap();
        assert!(s > last);
        last = s;
    }
}

#[test]
fn rejects_unsupported_inputs() {
    let r2 = ModelSpec::translation_invariant(Potential::Zero, &[-0.1, -0.1], 0.5, 8).unwrap();
    assert!(matches!(TransferEngine::new(&r2), Err(Error::RequiresNearestNeighbour(2))));
    let eng = TransferEngine::new(&double_well(6)).unwrap();
    assert!(eng.gce_stats(0.0, &[LocalFunction::spin(6)]).is_err());
    assert!(LocalFunction::new(0, 5, "wide", |_| 0.0).is_err());
    let a = LocalFunction::new(0, 2, "a", |_| 1.0).unwrap();
    let b = LocalFunction::new(3, 2, "b", |_| 1.0).unwrap();
    assert!(a.product(&b).is_err());
}

#[test]
fn block_moments_of_gaussian() {
    // Fourth central moment of a Gaussian sum is 3 var^2.
    let model = gaussian_nn(-0.2, 12);
    let eng = TransferEngine::new(&model).unwrap();
    let cov = GaussianModel::new(&model).unwrap().covariance();
    let var: f64 = (2..10).flat_map(|i| (2..10).map(move |j| (i, j))).map(|(i, j)| cov[(i, j)]).sum();
    let m = eng.block_central_moments(0.3, 2..10, 4).unwrap();
    assert!((m[0] - 1.0).abs() < 1e-12);
    assert!(m[1].abs() < 1e-10);
    assert!((m[2] - var).abs() < 1e-8);
    assert!((m[4] - 3.0 * var * var).abs() < 1e-7);
    let abs4 = eng.central_absolute_moments(0.3, 4);
    assert!((abs4[5] - 3.0 * cov[(5, 5)].powi(2)).abs() < 1e-8);
}
