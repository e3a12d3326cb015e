//! Anchored Bayesian Gaussian mixture models.
//!
//! Fixing the component label of a few observations ("anchor points") breaks
//! the label symmetry of an exchangeable mixture prior, so component-wise
//! posterior summaries are meaningful straight out of the sampler. This crate
//! provides:
//!
//! * [`model`]: mixture densities, anchored likelihoods, responsibilities and
//!   exact enumeration oracles for small known-variance problems;
//! * [`selection`]: anchored EM with an exact transportation E-step and
//!   minimum-entropy anchor selection;
//! * [`asymptotics`]: the limiting relabeling distribution, the
//!   quasi-consistency coefficient and its entropy;
//! * [`gibbs`]: a multi-chain Gibbs sampler for anchored Normal-Gamma and
//!   Normal-Wishart mixtures, with posterior summaries;
//! * [`predictive`]: the ELPPD simulation study over the number of anchors;
//! * [`ingest`]: CSV loading and accelerometer feature extraction.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod data;
pub mod datasets;
pub mod error;
pub mod gaussian;
pub mod gibbs;
pub mod ingest;
pub mod model;
pub mod predictive;
pub mod rng;
pub mod selection;

pub use data::Dataset;
pub use error::{Error, Result};
pub use gaussian::{Covariance, Gaussian};
pub use model::{
    AllocationVector, AnchorSet, ComponentPrior, MixtureParams, NormalGammaPrior, NormalWishartPrior, PriorSpec,
    RatePrior, ResponsibilityMatrix,
};
