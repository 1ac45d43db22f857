//! Cross-dataset flow-feature alignment, leakage-checked evaluation protocol and
//! a deterministic TCH-Net inference kernel.

pub mod error;
pub mod rng;
pub mod digest;
pub mod parallel;
pub mod vocab;
pub mod ingest;
pub mod transform;
pub mod windows;
pub mod protocol;
pub mod metrics;
pub mod tchnet;
pub mod tensorio;
pub mod pipeline;
pub mod fixtures;
pub mod cli;

pub use error::{Error, Result};
