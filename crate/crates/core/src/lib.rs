//! Terrain and slip-mode identification for skid-steered ground robots.
//!
//! A skid-steered robot's response to wheel commands depends on which
//! surface it is on and which wheels are slipping. This crate models each
//! candidate regime as its own motion model, runs a bank of mode-matched
//! Kalman filters over a shared measurement stream, and blends them with an
//! interacting multiple model estimator whose mode probabilities identify
//! the active regime online.
//!
//! - [`models`]: robot geometry, wheel commands, and the two model
//!   families (terrain-level velocity lags, wheel-level slip poses).
//! - [`filters`]: the shared predict/update steps and Gaussian innovation
//!   likelihoods.
//! - [`imm`]: mixing, the bank step, mode-probability updates, and fusion.
//! - [`sim`]: synthetic truth with substepped integration, parameter
//!   jitter, and seeded sensor synthesis.
//! - [`eval`]: identification latency, mode accuracy, RMSE, decisiveness.
//! - [`scenario`]: JSON configuration, bundled scenarios, and the
//!   end-to-end run pipeline with CSV/JSON artifacts.

pub mod error;
pub mod eval;
pub mod filters;
pub mod imm;
pub mod models;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
