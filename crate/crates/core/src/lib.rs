//! Fair conformal prediction for classification.
//!
//! The crate calibrates split-conformal prediction sets, learns latent groups
//! whose coverage falls short with a variational encoder-decoder, unions
//! group-recalibrated sets to restore coverage on those groups, and audits
//! conditional coverage with linear and quadratic worst-slab metrics.

pub mod diffcore;
pub mod conformal;
pub mod grouplearn;
pub mod metrics;
pub mod datagen;
pub mod harness;
