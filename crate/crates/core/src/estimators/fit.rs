//! Exponential-plus-plateau fits to covariance curves.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::curve::{CorrelationCurve, CurvePoint};

/// Fewest signal points needed for a fit.
pub const MIN_FIT_POINTS: usize = 5;
/// A point is signal when `|cov| > SIGNAL_SE * se`.
pub const SIGNAL_SE: f64 = 3.0;

/// `cov(d) ~ amplitude * exp(-rate * d) + plateau` over `[window_lo, window_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub rate: f64,
    pub plateau: f64,
    /// Weighted root-sum-square residual.
    pub residual: f64,
    pub window_lo: usize,
    pub window_hi: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FitOutcome {
    Fit(DecayFit),
    NoFit { reason: String },
}

impl FitOutcome {
    pub fn fit(&self) -> Option<&DecayFit> {
        match self {
            FitOutcome::Fit(f) => Some(f),
            FitOutcome::NoFit { .. } => None,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("status,amplitude,rate,plateau,residual,window_lo,window_hi\n");
        match self {
            FitOutcome::Fit(f) => {
                let _ = writeln!(
                    s,
                    "fit,{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
                    f.amplitude, f.rate, f.plateau, f.residual, f.window_lo, f.window_hi
                );
            }
            FitOutcome::NoFit { .. } => s.push_str("no_fit,,,,,,\n"),
        }
        s
    }
}

impl DecayFit {
    pub fn eval(&self, d: f64) -> f64 {
        self.amplitude * (-self.rate * d).exp() + self.plateau
    }
}

/// Contiguous run of signal points starting at `d = 1`.
fn signal_window(curve: &CorrelationCurve) -> Vec<CurvePoint> {
    curve
        .points
        .iter()
        .filter(|p| p.d >= 1)
        .take_while(|p| p.cov.abs() > SIGNAL_SE * p.se)
        .copied()
        .collect()
}

/// Weighted least squares for amplitude and plateau at a fixed rate.
fn project(points: &[CurvePoint], rate: f64) -> Option<(f64, f64, f64)> {
    let (mut s_ee, mut s_e1, mut s_11, mut s_ey, mut s_1y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let scale = points.iter().map(|p| p.se).fold(f64::INFINITY, f64::min);
    for p in points {
        let w = (scale / p.se).powi(2);
        let e = (-rate * p.d as f64).exp();
        s_ee += w * e * e;
        s_e1 += w * e;
        s_11 += w;
        s_ey += w * e * p.cov;
        s_1y += w * p.cov;
    }
    let det = s_ee * s_11 - s_e1 * s_e1;
    if det.is_nan() || det <= 1e-14 * s_ee * s_11 {
        return None;
    }
    let a = (s_ey * s_11 - s_e1 * s_1y) / det;
    let p = (s_ee * s_1y - s_e1 * s_ey) / det;
    let rss: f64 = points
        .iter()
        .map(|q| ((q.cov - a * (-rate * q.d as f64).exp() - p) / q.se).powi(2))
        .sum();
    Some((a, p, rss))
}

/// Fits the signed covariance with the rate found by variable projection.
pub fn fit_decay(curve: &CorrelationCurve) -> FitOutcome {
    let pts = signal_window(curve);
    if pts.len() < MIN_FIT_POINTS {
        return FitOutcome::NoFit { reason: format!("{} signal points, need {MIN_FIT_POINTS}", pts.len()) };
    }
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.cov), h.max(p.cov)));
    let max_se = pts.iter().map(|p| p.se).fold(0.0, f64::max);
    if hi - lo <= SIGNAL_SE * max_se {
        return FitOutcome::NoFit { reason: "curve is flat within its errors".into() };
    }

    let cost = |c: f64| project(&pts, c).map_or(f64::INFINITY, |r| r.2);
    let mut candidates: Vec<f64> = (0..=120).map(|k| 1e-4 * 10f64.powf(k as f64 / 24.0)).collect();
    if pts[1].cov / pts[0].cov > 0.0 {
        // Log-ratio of the first two points.
        let guess = (pts[0].cov / pts[1].cov).ln() / (pts[1].d - pts[0].d) as f64;
        if guess.is_finite() && guess > 0.0 {
            candidates.push(guess);
        }
    }
    candidates.sort_by(f64::total_cmp);
    let best = (0..candidates.len()).min_by(|&i, &j| cost(candidates[i]).total_cmp(&cost(candidates[j]))).unwrap();
    let (mut a, mut b) = (
        candidates[best.saturating_sub(1)],
        candidates[(best + 1).min(candidates.len() - 1)],
    );
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let (x1, x2) = (b - g * (b - a), a + g * (b - a));
        if cost(x1) < cost(x2) {
            b = x2;
        } else {
            a = x1;
        }
        if b - a < 1e-12 * b {
            break;
        }
    }
    let rate = 0.5 * (a + b);
    match project(&pts, rate) {
        Some((amplitude, plateau, rss)) => {
            let scale = pts.iter().map(|p| p.se).fold(f64::INFINITY, f64::min);
            FitOutcome::Fit(DecayFit {
                amplitude,
                rate,
                plateau,
                residual: rss.sqrt() * scale,
                window_lo: pts[0].d,
                window_hi: pts[pts.len() - 1].d,
            })
        }
        None => FitOutcome::NoFit { reason: "degenerate basis".into() },
    }
}

/// Ordinary least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_norm: f64,
    pub signal_norm: f64,
}

impl LinearFit {
    pub fn relative_residual(&self) -> f64 {
        self.residual_norm / self.signal_norm
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual_norm = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum::<f64>().sqrt();
    let signal_norm = y.iter().map(|b| b * b).sum::<f64>().sqrt();
    LinearFit { slope, intercept, residual_norm, signal_norm }
}
