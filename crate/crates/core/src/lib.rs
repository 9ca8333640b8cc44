//! Hawkes self-exciting point processes with renewal immigration.
//!
//! The crate covers model evaluation, simulation by the branching
//! construction, two EM estimators with a latent branching structure,
//! direct likelihood maximization of the standard process, and goodness of
//! fit by Monte Carlo over immigrant indicators.

pub mod baseline;
pub mod em_complete;
pub mod em_semicomplete;
pub mod experiments;
pub mod error;
mod estep;
pub mod gof;
pub mod model;
pub mod optim;
pub mod report;
pub mod simulate;

pub use error::{HawkesError, Result};
