//! Variational autoencoders whose latent dimensionality is compressed while
//! they train.
//!
//! A run starts from a deliberately large latent space. Every `patience`
//! epochs a controller fits least-squares slopes to four validation curves
//! (silhouette of K-means clusters on the posterior means, Fréchet distance of
//! reconstructions and of generations, and reconstruction loss) and either
//! removes latent neurons from the encoder heads and the first decoder layer,
//! or freezes the latent size once all four slopes turn positive.
//!
//! Module map:
//!
//! - [`numerics`]: row-major matrices, seeded RNG, slope fitting, PSD square
//!   root, covariance, finite differences.
//! - [`model`]: the fully connected VAE, its analytic gradients, Adam, and
//!   checkpoints.
//! - [`pruning`]: structural removal of latent neurons.
//! - [`metrics`]: K-means, silhouette, Fréchet distance, per-epoch evaluation.
//! - [`controller`]: the slope-driven compression schedule.
//! - [`data`]: IDX files, synthetic blobs, batching.
//! - [`harness`]: adaptive, fixed and grid-search experiment runners.

pub mod controller;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pruning;

pub use error::{Error, Result};
