//! Privacy-preserving geofencing: a trusted gateway encrypts movement
//! reports and subscription boxes under three shifted tilings so that
//! untrusted backends can detect geofence crossings without learning
//! plaintext locations or linking consecutive movements.

pub mod analysis;
pub mod backend;
pub mod crypto;
pub mod error;
pub mod gateway;
pub mod geometry;
pub mod params;
pub mod sim;
pub mod wire;

pub use error::{Error, Result};
pub use params::{CipherOptions, OpeMode, SystemParams};
