//! Covariance as a function of lattice distance.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::stats::{mean, mean_with_error};
use crate::error::{Error, Result};
use crate::samplers::SampleBatch;

/// Fewest retained rows accepted by [`covariance_curve`].
pub const MIN_ROWS: usize = 500;
/// Smallest standard error attached to a point.
pub const EXACT_SE: f64 = 1e-14;
/// Relative precision assumed for deterministically computed values.
pub const EXACT_RELATIVE_SE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub d: usize,
    pub cov: f64,
    pub se: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub points: Vec<CurvePoint>,
}

impl CorrelationCurve {
    pub fn new(points: Vec<CurvePoint>) -> Result<Self> {
        for w in points.windows(2) {
            if w[1].d <= w[0].d {
                return Err(Error::InvalidConfig("curve distances must be strictly increasing".into()));
            }
        }
        if points.iter().any(|p| p.se.is_nan() || p.se <= 0.0) {
            return Err(Error::InvalidConfig("curve standard errors must be positive".into()));
        }
        Ok(Self { points })
    }

    /// Curve of deterministically computed values starting at distance 0.
    pub fn exact(values: &[f64]) -> Self {
        Self::exact_with_floor(values, EXACT_SE)
    }

    /// Like [`exact`](Self::exact) with an absolute error floor, for engines
    /// whose discretization error dominates far in the tail.
    pub fn exact_with_floor(values: &[f64], floor: f64) -> Self {
        Self {
            points: values
                .iter()
                .enumerate()
                .map(|(d, &cov)| CurvePoint { d, cov, se: (EXACT_RELATIVE_SE * cov.abs()).max(floor), n: 0 })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn at(&self, d: usize) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.d == d)
    }

    /// CSV with columns `d,cov,se,n`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("d,cov,se,n\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{:.16e},{:.16e},{}", p.d, p.cov, p.se, p.n);
        }
        s
    }
}

/// `cov(x_anchor, x_{anchor+d})` for every `d` that stays in the window.
///
/// Each point is the mean of the per-row products of centered spins, with a
/// batch-means error.
pub fn covariance_curve(batch: &SampleBatch, anchor: usize) -> Result<CorrelationCurve> {
    let rows = batch.rows();
    if rows < MIN_ROWS {
        return Err(Error::InsufficientSamples { got: rows, need: MIN_ROWS });
    }
    if anchor >= batch.n {
        return Err(Error::IndexOutOfRange { index: anchor, n: batch.n });
    }
    let means: Vec<f64> = (0..batch.n).map(|i| mean(&batch.site_series(i))).collect();
    let xa = batch.site_series(anchor);
    let mut points = Vec::new();
    for j in anchor..batch.n {
        let products: Vec<f64> = batch
            .iter_rows()
            .zip(&xa)
            .map(|(row, &a)| (a - means[anchor]) * (row[j] - means[j]))
            .collect();
        let e = mean_with_error(&products)?;
        points.push(CurvePoint { d: j - anchor, cov: e.mean, se: e.standard_error.max(EXACT_SE), n: rows });
    }
    Ok(CorrelationCurve { points })
}

/// Curve averaged over all anchors `i` with `i` and `i + d` at least
/// `margin` sites from either window edge, up to distance `d_max`.
pub fn covariance_curve_pooled(batch: &SampleBatch, d_max: usize, margin: usize) -> Result<CorrelationCurve> {
    let rows = batch.rows();
    if rows < MIN_ROWS {
        return Err(Error::InsufficientSamples { got: rows, need: MIN_ROWS });
    }
    let n = batch.n;
    let means: Vec<f64> = (0..n).map(|i| mean(&batch.site_series(i))).collect();
    let mut points = Vec::new();
    for d in 0..=d_max {
        let anchors: Vec<usize> = (margin..n).filter(|&i| i + d + margin < n).collect();
        if anchors.is_empty() {
            break;
        }
        let products: Vec<f64> = batch
            .iter_rows()
            .map(|row| {
                anchors.iter().map(|&i| (row[i] - means[i]) * (row[i + d] - means[i + d])).sum::<f64>()
                    / anchors.len() as f64
            })
            .collect();
        let e = mean_with_error(&products)?;
        points.push(CurvePoint { d, cov: e.mean, se: e.standard_error.max(EXACT_SE), n: rows });
    }
    Ok(CorrelationCurve { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, Potential};
    use crate::samplers::{run_ce_chain, ChainConfig};

    #[test]
    fn too_few_rows() {
        let m = ModelSpec::translation_invariant(Potential::Zero, &[0.0], 0.5, 4).unwrap();
        let b = run_ce_chain(&m, 0.0, &ChainConfig::new(1, 100, 0)).unwrap();
        assert!(matches!(covariance_curve(&b, 0), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn exchangeable_ce_curve_is_flat() {
        let m = ModelSpec::translation_invariant(Potential::Zero, &[0.0], 0.5, 16).unwrap();
        let b = run_ce_chain(&m, 0.0, &ChainConfig::new(2, 20_000, 500)).unwrap();
        let c = covariance_curve(&b, 0).unwrap();
        assert!(c.points[0].cov > 0.0);
        for p in &c.points[1..] {
            assert!((p.cov + 0.0625).abs() < 4.0 * p.se + 1e-3, "d={} {} +- {}", p.d, p.cov, p.se);
        }
        let csv = c.to_csv();
        assert!(csv.starts_with("d,cov,se,n\n0,"));
    }

    #[test]
    fn rejects_unordered_points() {
        let p = CurvePoint { d: 1, cov: 0.0, se: 1.0, n: 1 };
        assert!(CorrelationCurve::new(vec![p, p]).is_err());
        assert!(CorrelationCurve::new(vec![CurvePoint { se: 0.0, ..p }]).is_err());
    }
}
