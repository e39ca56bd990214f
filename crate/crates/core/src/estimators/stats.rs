//! Means of correlated series with batch-means errors and autocorrelation times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shortest series accepted by [`mean_with_error`].
pub const MIN_SERIES: usize = 100;
/// Smallest number of batches used for the standard error.
pub const MIN_BATCHES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub standard_error: f64,
    /// Integrated autocorrelation time, 1 for independent samples.
    pub iat: f64,
    pub samples: usize,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Batch-means standard error and initial-positive-sequence autocorrelation time.
pub fn mean_with_error(series: &[f64]) -> Result<MeanEstimate> {
    let n = series.len();
    if n < MIN_SERIES {
        return Err(Error::SeriesTooShort { len: n, min: MIN_SERIES });
    }
    let mu = mean(series);
    let b = ((n as f64).sqrt().floor() as usize).min(n / MIN_BATCHES).max(1);
    let k = n / b;
    let batch_means: Vec<f64> = (0..k).map(|j| mean(&series[j * b..(j + 1) * b])).collect();
    let bm = mean(&batch_means);
    let var_b = batch_means.iter().map(|x| (x - bm).powi(2)).sum::<f64>() / (k - 1) as f64;
    Ok(MeanEstimate { mean: mu, standard_error: (var_b / k as f64).sqrt(), iat: iat(series), samples: n })
}

/// Geyer's initial positive sequence estimate of `1 + 2 sum_k rho_k`.
pub fn iat(series: &[f64]) -> f64 {
    let n = series.len();
    let mu = mean(series);
    let centred: Vec<f64> = series.iter().map(|x| x - mu).collect();
    let acov = |k: usize| centred[..n - k].iter().zip(&centred[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let g0 = acov(0);
    if g0 <= 0.0 {
        return 1.0;
    }
    let mut total = -g0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = acov(2 * m) + acov(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        total += 2.0 * pair;
        m += 1;
    }
    (total / g0).max(1.0 / n as f64)
}

/// Sample covariance of two equally long series.
pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64
}
