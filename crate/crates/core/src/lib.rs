//! Generalizability-aware classification.
//!
//! A classifier is trained with a combined objective: binary cross-entropy on
//! its probability output plus a Fréchet normal loss that forces the latent
//! mappings of positive-class inputs into a standard multivariate normal
//! distribution. After training, the positive latents are summarized by a
//! fitted Gaussian; at inference time each exam (a group of candidates scored
//! together) receives a high/low generalizability flag by comparing the median
//! squared Mahalanobis distance of its predicted positives against a
//! chi-square quantile.
//!
//! Module map:
//!
//! - [`numstat`] — symmetric eigendecomposition, SPD square root/inverse,
//!   mean/covariance, Mahalanobis distance, chi-square quantile, median.
//! - [`fnl`] — Fréchet normal loss forward and exact gradient.
//! - [`net`] — feedforward classifier with an exposed latent layer, combined
//!   loss, backpropagation, Adam.
//! - [`bundle`] — model persistence (weights, forced distribution, threshold).
//! - [`sampler`] — class-balanced paired batches with feature augmentation.
//! - [`synth`] — synthetic cohort generation with controllable domain shift.
//! - [`gencheck`] — forced-distribution fitting and per-exam flagging.
//! - [`evalkit`] — threshold calibration, sensitivity/AFP evaluation,
//!   stratified reporting.
//! - [`train`] — the training loop tying net, sampler and fnl together.

pub mod bundle;
pub mod error;
pub mod evalkit;
pub mod fnl;
pub mod gencheck;
pub mod net;
pub mod numstat;
pub mod sampler;
pub mod seed;
pub mod synth;
pub mod testing;
pub mod train;

pub use error::{CoreError, Result};
