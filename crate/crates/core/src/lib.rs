//! Iterated Bellman calibration for off-policy value prediction.
//!
//! The crate is organized bottom-up:
//!
//! - [`mdp`]: transitions, policies, and exact tabular Bellman machinery.
//! - [`crm`]: a synthetic customer-relationship MDP with behavior and
//!   target policies, dataset simulation and Monte Carlo ground truth.
//! - [`calib`]: one-dimensional calibrators (histogram binning, PAVA).
//! - [`nuisance`]: importance weights, reward and next-value models.
//! - [`bellman`]: doubly robust Bellman targets, iterated Bellman
//!   calibration, the iso-hist hybrid and fitted-value-iteration bases.
//! - [`eval`]: calibration-error and RMSE metrics plus exact coarsened
//!   fixed points and the calibration/refinement decomposition.
//! - [`experiment`]: the seeded multi-run harness.

pub mod bellman;
pub mod calib;
pub mod config;
pub mod crm;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod mdp;
pub mod nuisance;
pub mod oracle;
pub mod regress;
pub mod rng;
pub mod tabular;

pub use error::{Error, Result};
