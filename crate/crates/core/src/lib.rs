//! Encrypted-domain inference for a convolutional actor network.
//!
//! The crate evaluates the network entirely with SIMD slot operations (add,
//! multiply, rotate) and compares every block against a plaintext reference.

pub mod ckks;
pub mod error;
pub mod harness;
pub mod hft;
pub mod layers;
pub mod reference;
pub mod slot_engine;

pub use error::{Error, Result};
