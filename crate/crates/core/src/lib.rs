//! Multi-instance relation extraction with hierarchical relation-augmented
//! attention over PCNN sentence encodings.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod pipeline;
pub mod reference;
pub mod relattn;
pub mod seed;
pub mod training;
mod util;

pub use error::{Error, Result};
