mod common;

use canon_lattice::estimators::{mean_with_error, stats::covariance};
use canon_lattice::gaussian::GaussianModel;
use canon_lattice::samplers::{
    acceptance_probability, rejection_draw, run_ce_chain, run_gce_chain, two_boundary_ce_pair, ChainConfig, SampleBatch,
};
use canon_lattice::transfer::QuadratureGrid;
use canon_lattice::Potential;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const COSINE: Potential = Potential::Cosine { beta: 1.0, omega: 1.0 };

/// 1000 random centres with 1000 draws each: the mean number of proposals per
/// draw must match `1 / acceptance_probability` to 1%.
#[test]
fn rejection_acceptance_matches_envelope_bound() {
    let sup = COSINE.sup_norms().value;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut tries, mut predicted) = (0u64, 0.0);
    for _ in 0..1000 {
        let center = rng.random_range(-3.0..3.0);
        let sd = rng.random_range(0.5..1.5);
        let p = acceptance_probability(center, sd, &COSINE, sup);
        assert!(p >= (-2.0 * sup).exp() - 1e-12);
        predicted += 1000.0 / p;
        for _ in 0..1000 {
            tries += rejection_draw(&mut rng, center, sd, &COSINE, sup).1;
        }
    }
    let rel = (tries as f64 - predicted).abs() / predicted;
    assert!(rel < 0.01, "relative gap {rel}");
}

/// Draws follow the tilted Gaussian: first two moments against quadrature.
#[test]
fn rejection_draws_have_exact_moments() {
    let sup = COSINE.sup_norms().value;
    let (center, sd) = (0.4, 1.0);
    let grid = QuadratureGrid::gauss_hermite(80, 0.0, 1.0).unwrap();
    let (mut z0, mut z1, mut z2) = (0.0, 0.0, 0.0);
    for (&t, w) in grid.nodes().iter().zip(grid.gaussian_weights()) {
        let x = center + sd * t;
        let f = w * (-COSINE.value(x)).exp();
        z0 += f;
        z1 += f * x;
        z2 += f * x * x;
    }
    let (mu, var) = (z1 / z0, z2 / z0 - (z1 / z0).powi(2));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 400_000;
    let xs: Vec<f64> = (0..n).map(|_| rejection_draw(&mut rng, center, sd, &COSINE, sup).0).collect();
    let m = xs.iter().sum::<f64>() / n as f64;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((m - mu).abs() < 4.0 * (var / n as f64).sqrt(), "{m} vs {mu}");
    assert!((v - var).abs() < 0.01 * var, "{v} vs {var}");
}

#[test]
fn gaussian_band_gce_covariance_matches_oracle() {
    let model = common::reference_band(32);
    let g = GaussianModel::new(&model).unwrap();
    let sigma = g.sigma_of_m(0.3);
    let exact = g.covariance()[(8, 16)];
    let batch = run_gce_chain(&model, sigma, &ChainConfig::new(3, 40_000, 1000)).unwrap();
    let mu = g.mean(sigma);
    let prod: Vec<f64> = batch.iter_rows().map(|r| (r[8] - mu[8]) * (r[16] - mu[16])).collect();
    let est = mean_with_error(&prod).unwrap();
    assert!((est.mean - exact).abs() < 3.0 * est.standard_error, "{} +- {} vs {exact}", est.mean, est.standard_error);
}

#[test]
fn ce_chain_pins_the_mean_spin() {
    let model = common::reference(24);
    let batch = run_ce_chain(&model, 0.7, &ChainConfig::new(8, 2000, 100)).unwrap();
    assert!(batch.max_constraint_violation().unwrap() < 1e-12);
    for row in batch.iter_rows() {
        let m = row.iter().sum::<f64>() / row.len() as f64;
        assert!((m - 0.7).abs() < 1e-12);
    }
}

/// Canonical covariance rows sum to zero; checked on the sampled rows.
#[test]
fn ce_covariance_rows_sum_to_zero() {
    let model = common::reference_band(32);
    let batch = run_ce_chain(&model, 0.3, &ChainConfig::new(4, 20_000, 1000)).unwrap();
    let x8 = batch.site_series(8);
    let total: f64 = (0..32).map(|j| covariance(&x8, &batch.site_series(j))).sum();
    assert!(total.abs() < 1e-10, "{total}");
    let oracle = GaussianModel::new(&model).unwrap().ce_moments(0.3);
    let est = mean_with_error(&batch.series(|r| (r[8] - oracle.mean[8]) * (r[9] - oracle.mean[9]))).unwrap();
    assert!((est.mean - oracle.cov[(8, 9)]).abs() < 3.0 * est.standard_error);
}

#[test]
fn identical_boundaries_give_no_difference() {
    let base = common::reference(15);
    let y = base.with_boundary(vec![1.0; 2], vec![1.0; 2]).unwrap();
    let (a, b) = two_boundary_ce_pair(&y, &y, 0.0, &ChainConfig::new(9, 20_000, 1000)).unwrap();
    let ea = mean_with_error(&a.site_series(7)).unwrap();
    let eb = mean_with_error(&b.site_series(7)).unwrap();
    let se = ea.standard_error.hypot(eb.standard_error);
    assert!((ea.mean - eb.mean).abs() < 3.0 * se);
}

#[test]
fn gaussian_boundary_difference_matches_oracle() {
    let base = common::reference_band(15);
    let y = base.with_boundary(vec![2.0; 2], vec![2.0; 2]).unwrap();
    let z = base.with_boundary(vec![-2.0; 2], vec![-2.0; 2]).unwrap();
    let exact =
        GaussianModel::new(&y).unwrap().ce_moments(0.0).mean[7] - GaussianModel::new(&z).unwrap().ce_moments(0.0).mean[7];
    let (a, b) = two_boundary_ce_pair(&y, &z, 0.0, &ChainConfig::new(2, 20_000, 1000)).unwrap();
    let ea = mean_with_error(&a.site_series(7)).unwrap();
    let eb = mean_with_error(&b.site_series(7)).unwrap();
    let se = ea.standard_error.hypot(eb.standard_error);
    assert!((ea.mean - eb.mean - exact).abs() < 3.0 * se, "{} vs {exact}", ea.mean - eb.mean);
}

#[test]
fn pair_rejects_models_differing_beyond_boundary() {
    let a = common::reference(10);
    let b = common::reference_band(10);
    assert!(two_boundary_ce_pair(&a, &b, 0.0, &ChainConfig::new(1, 10, 0)).is_err());
}

#[test]
fn batches_round_trip_through_csv() {
    let model = common::reference(8);
    let cfg = ChainConfig::new(77, 300, 50).with_thinning(5);
    let batch = run_gce_chain(&model, 0.2, &cfg).unwrap();
    let again = run_gce_chain(&model, 0.2, &cfg).unwrap();
    assert_eq!(batch.to_csv_string(), again.to_csv_string());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("batch.csv");
    batch.write_csv(&path).unwrap();
    let read = SampleBatch::read_csv(&path).unwrap();
    assert_eq!(read, batch);
    assert_eq!(read.rows(), 50);
}
