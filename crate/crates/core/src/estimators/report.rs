use serde::{Deserialize, Serialize};

/// Free energies of both ensembles with their first two sigma-derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyReport {
    pub n: usize,
    pub sigma: f64,
    /// Mean spin matched to `sigma`.
    pub m: f64,
    pub a_gce: f64,
    pub a_ce: f64,
    pub d1_gce: f64,
    pub d1_ce: f64,
    pub d2_gce: f64,
    pub d2_ce: f64,
    /// `g(0)` of the centered, rescaled total spin.
    pub density_at_zero: f64,
    pub gap_a: f64,
    pub gap_d1: f64,
    pub gap_d2: f64,
}

impl FreeEnergyReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        sigma: f64,
        m: f64,
        (a_gce, d1_gce, d2_gce): (f64, f64, f64),
        (a_ce, d1_ce, d2_ce): (f64, f64, f64),
        density_at_zero: f64,
    ) -> Self {
        Self {
            n,
            sigma,
            m,
            a_gce,
            a_ce,
            d1_gce,
            d1_ce,
            d2_gce,
            d2_ce,
            density_at_zero,
            gap_a: (a_gce - a_ce).abs(),
            gap_d1: (d1_gce - d1_ce).abs(),
            gap_d2: (d2_gce - d2_ce).abs(),
        }
    }

    pub fn is_convex(&self) -> bool {
        self.d2_gce > 0.0
    }
}

/// Centered first and second differences `(f(x+h) - f(x-h)) / 2h` and
/// `(f(x+h) - 2 f(x) + f(x-h)) / h^2`.
pub fn central_differences(minus: f64, centre: f64, plus: f64, h: f64) -> (f64, f64) {
    ((plus - minus) / (2.0 * h), (plus - 2.0 * centre + minus) / (h * h))
}
