//! Simulation and security analysis of key establishment through a
//! mode-scrambling multimode fiber.
//!
//! The crate is organised by role:
//!
//! - [`channel`]: the fiber as a random linear scrambler, attenuation and
//!   geometry limits.
//! - [`calibration`]: randomized phase-stepping calibration, row
//!   reconstruction, focus synthesis and the calibration tamper check.
//! - [`detection`]: Bob's photon-counting detectors, decoding rules and the
//!   success/rejection statistics.
//! - [`adversary`]: Eve's measurement models and intercept-resend attack.
//! - [`security`]: entropies, qudit error rates and photon budgets.
//! - [`protocol`]: end-to-end sessions with a classical message transcript.
//!
//! All randomness flows through explicitly seeded generators (see [`rng`]).

pub mod adversary;
pub mod calibration;
pub mod channel;
pub mod detection;
mod error;
pub mod protocol;
pub mod rng;
pub mod security;
pub mod stats;

pub use error::{Error, Result};
pub use num_complex::Complex64;
