//! Desk-scale laboratory for in-distribution-data-free backdoor removal.
//!
//! The crate trains small poisoned image classifiers, reconstructs stabilized
//! synthetic training data from them by optimizing in the latent space of a
//! generative prior, and uses the reconstructions to drive minimax trigger
//! synthesis and unlearning. A companion module audits, on exactly solvable
//! discrete instances, the game-theoretic argument for why a clean generative
//! prior cannot emit backdoored samples.
//!
//! Module map:
//! - [`datamodel`] — datasets, checkpoints, splits, the synthetic desk data;
//! - [`attacks`] — trigger construction and dataset poisoning;
//! - [`victim`] — classifier training, evaluation, gradient/feature probes;
//! - [`prior`] — the generative prior (generator + discriminator);
//! - [`inversion`] — inversion losses and the stabilized synthesis loop;
//! - [`defense`] — minimax trigger synthesis/unlearning and fine-tuning;
//! - [`diagnostics`] — stability analyses and trigger-recovery probes;
//! - [`equilibrium`] — discrete optimal transport and equilibrium audits;
//! - [`nn`] — the shared batched neural-network engine;
//! - [`fd`] — finite-difference oracles for the test suites.

pub mod attacks;
pub mod datamodel;
pub mod defense;
pub mod diagnostics;
pub mod equilibrium;
pub mod error;
pub mod fd;
pub mod inversion;
pub mod nn;
pub mod prior;
pub mod seeds;
pub mod victim;

pub use error::{Error, Result};
