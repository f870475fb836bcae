//! Over-the-air federated learning protected by spectrum breathing.
//!
//! Devices randomly prune their local gradients (spectrum contraction) and
//! spread the surviving coefficients with PN sequences, so the bandwidth
//! freed by pruning buys processing gain against interference. The
//! breathing depth `G` sets both at once: `1/G` of the coordinates are
//! sent, each over `G` chips.
//!
//! Modules follow the data path of one round:
//!
//! - [`signal`]: prune, normalize, spread / de-spread, de-normalize, zero-pad.
//! - [`channel`]: Rayleigh fading, truncated inversion, superposition with
//!   Gaussian interference, power accounting.
//! - [`aircomp`]: the two chains joined through the channel.
//! - [`breathing`]: fixed and adaptive breathing-depth control.
//! - [`learning`]: datasets, tasks, local gradients and the SGD update.
//! - [`analysis`]: closed-form error and convergence diagnostics.
//! - [`harness`]: schemes, the round loop, telemetry and plot data.
//! - [`verify`]: the oracle and property suite behind `airbreathe verify`.

pub mod aircomp;
pub mod analysis;
pub mod breathing;
pub mod channel;
pub mod error;
pub mod harness;
pub mod learning;
pub mod rng;
pub mod signal;
pub mod verify;

pub use error::{Error, Result};
