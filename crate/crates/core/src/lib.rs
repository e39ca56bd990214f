//! Grand canonical and canonical ensembles of one-dimensional lattice systems
//! with unbounded continuous spins.
//!
//! Three independent engines compute the same quantities:
//!
//! * [`gaussian`]: closed forms when the perturbation vanishes,
//! * [`transfer`]: quadrature-discretized transfer operators and Fourier
//!   inversion for nearest-neighbour models,
//! * [`samplers`]: exact heat-bath and sum-preserving pair MCMC at any range.
//!
//! [`estimators`] turns their output into means, correlation curves, decay
//! fits and free-energy reports, and [`experiments`] drives the
//! `canon-lattice` command line.

pub mod banded;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod gaussian;
pub mod model;
pub mod par;
pub mod samplers;
pub mod transfer;

pub use error::{Error, Result};
pub use model::{ModelSpec, Potential, SpinConfig};
