//! Masked-network autoencoding for parcellated resting-state time series.
//!
//! Recordings are cut into network-aligned patch tokens ([`data`]); one
//! whole network is hidden and reconstructed from the others by a
//! transformer whose decoder only cross-attends to the encoder output
//! ([`model`], [`train`]). The decoder attention is then read as a
//! network-to-network contribution profile ([`analysis`]). [`synth`]
//! generates cohorts with a known coupling matrix to check all of this,
//! and [`cli`] wires the stages into the `netmae` command.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod seed;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
