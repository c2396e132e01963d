//! Bayesian local clustering of age-period log-mortality surfaces.
//!
//! Each population's log-mortality curve is a B-spline expansion whose
//! coefficients are clustered separately for every basis function and period.
//! Cluster structure evolves over periods through a temporal random partition
//! model, and a Gibbs sampler explores the joint posterior.

pub mod basis;
pub mod calibrate;
pub mod datagen;
pub mod draws;
pub mod error;
pub mod gibbs;
pub mod io;
pub mod model;
pub mod partition;
pub mod summary;

pub use basis::{BasisSpec, SplineBasis};
pub use calibrate::{calibrate_mu, initialize_state, InitStrategy, LoessSettings};
pub use draws::{Draw, DrawStore, RunManifest};
pub use error::{Error, ErrorKind, Result};
pub use gibbs::{run_chain, run_chains, Sampler, SamplerConfig, UpdateToggles};
pub use model::{GpCovariance, Hyperparameters, ModelState, SurfacePanel};
pub use partition::{Membership, PersistenceFlags};
pub use summary::{CoClusteringMatrix, IndicatorPanel};
