//! Statistics on top of the engines: errors, correlation curves, decay fits,
//! sigma matching and free-energy reports.

pub mod curve;
pub mod fit;
pub mod report;
pub mod sigma;
pub mod stats;

pub use curve::{covariance_curve, CorrelationCurve, CurvePoint};
pub use fit::{fit_decay, DecayFit, FitOutcome};
pub use report::FreeEnergyReport;
pub use stats::{mean_with_error, MeanEstimate};
