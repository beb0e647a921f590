//! Semiclassical Monte Carlo simulation of a single atom trapped in an
//! intracavity dipole trap and strongly coupled to a driven high-finesse
//! cavity mode.

pub mod analysis;
pub mod config;
pub mod dynamics;
pub mod experiment;
pub mod error;
pub mod oracle;
pub mod output;
pub mod physics;
pub mod protocol;
pub mod units;
pub mod validation;

pub use error::{Error, Result};
