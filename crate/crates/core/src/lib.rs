//! Simulator and analysis library for secure, private over-the-air federated
//! learning.
//!
//! Devices upload analog gradient signals over a shared multiple-access
//! channel while designated jammers transmit Gaussian noise; the base station
//! applies channel-weighted post-processing to recover the aggregate. The
//! crate covers the full loop: channel sampling, privacy and security
//! accounting, device scheduling (including the BnB-based sequential
//! promotion solver and the high-dimension closed form), convex desk-scale
//! learners, and convergence-bound validation against empirical traces.

// validation uses `!(x > 0.0)` so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod channel;
pub mod cli;
pub mod error;
pub mod fedlearn;
pub mod ota;
pub mod privsec;
pub mod scheduler;
pub mod seeding;
pub mod sysmodel;

pub use error::{Error, Result};
