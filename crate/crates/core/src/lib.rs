//! Inference-time dropout-rate adaptation with information-loss feedback.
//!
//! Monte Carlo dropout estimates predictive uncertainty by running several
//! stochastic forward passes, but a fixed rate ignores how differently each
//! layer and each input react to the injected noise. This crate adapts the
//! rate per dropout site and per input instance: dropout is treated as noise
//! in a communication channel, the information the noise destroys is
//! measured (relative mutual-information loss or `1 - SSIM`), and a feedback
//! loop steers every site toward a target loss level.
//!
//! Modules:
//!
//! * [`nn`] — dense network engine: forward with named dropout sites,
//!   activation capture, Adam training, text persistence.
//! * [`info`] — information-loss estimators: histogram MI (fixed and
//!   equal-mass binning), SSIM, and the loss functionals.
//! * [`ratein`] — the per-instance rate-adaptation loop and its reports.
//! * [`policies`] — baseline rate policies (constant, scheduled,
//!   activation-CoV) and the report adapter.
//! * [`mc`] — Monte Carlo harness and predictive summaries.
//! * [`metrics`] — MSE, ACC, DSC, ECE, AUARC, BUC, PICP/width/IER.
//! * [`data`] — synthetic regression / classification / segmentation
//!   generators, seeded and portable.
//! * [`experiments`] — scripted sweeps (noise, training size, convergence,
//!   layer sensitivity, timing) with CSV output.

pub mod data;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod info;
pub mod mc;
pub mod metrics;
pub mod nn;
pub mod policies;
pub mod ratein;
pub mod seed;

pub use error::{Error, Result};
