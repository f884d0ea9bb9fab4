//! Simulation and reconstruction chain for correlated, multiplexed qubit
//! readout: cavity record synthesis, software channelization, matched
//! filtering, soft-averaged / thresholded estimation, shot-by-shot
//! correlation and generalized-least-squares state and process tomography.

pub mod dsp;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod matched;
pub mod pipeline;
pub mod quantum;
pub mod readout;
pub mod records;
pub mod tomography;

pub use error::{Error, Result};
