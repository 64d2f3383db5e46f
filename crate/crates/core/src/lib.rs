//! Monte Carlo simulation of quantum key distribution across Quantum
//! Cities linked by satellites or high-altitude balloons.
//!
//! Each photon is followed individually: its transmissivity is drawn from
//! the beam-wander distribution of the link, attenuated by the atmosphere
//! and fiber, and finally detected or lost. Repeating this over orbit points
//! and trials yields raw key rates for downlinks, trusted-node chains and
//! entanglement-based links.
//!
//! The modules, bottom up:
//!
//! - [`sim`]: random streams, trials and rate statistics
//! - [`bessel`], [`channel`], [`atmosphere`]: per-photon loss models
//! - [`orbit`]: pass geometry
//! - [`protocols`]: BB84, BBM92 and the trusted chain
//! - [`scenario`], [`plot`]: configuration-driven runs with CSV/SVG output

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atmosphere;
pub mod bessel;
pub mod channel;
pub mod error;
pub mod orbit;
pub mod plot;
pub mod protocols;
pub mod scenario;
pub mod sim;

pub use error::{Error, ErrorKind, Result};
