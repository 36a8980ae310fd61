//! Sparse defect-sequence decoding for the rotated surface code.
//!
//! The pipeline runs: [`lattice`] geometry → [`noise`] sampling → [`defects`]
//! extraction → decoding with either the [`matching`] baseline or the neural
//! [`model`] (trained by [`training`]) → evaluation in [`harness`].

pub mod defects;
pub mod error;
pub mod harness;
pub mod lattice;
pub mod matching;
pub mod model;
pub mod noise;
pub mod training;

pub use error::{Error, Result};
