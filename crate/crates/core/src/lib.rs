//! Robust mean estimation from untrusted batches.
//!
//! `N` users each contribute a batch of `n` samples in `R^d`. Some users are
//! adversarial, and the remaining ones are either slightly off-target
//! ([`model::Variant::MeanShift`]) or have a fraction of their samples
//! replaced ([`model::Variant::TwoLevel`]). The crate provides data
//! generation under both models, spectral-filter estimators for each,
//! brute-force oracles for tiny instances, an adaptive search for unknown
//! corruption levels, lower-bound constructions, and a Monte Carlo harness.

pub mod adaptive;
pub mod error;
pub mod estimators;
pub mod hardness;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};

pub use model::{Adversary, BatchDataset, CleanSpec, CorruptionPlan, Family, Strategy, Variant};
