//! MatchVision: a desk-scale soccer video-language pipeline.

pub mod curation;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod heads;
pub mod metrics;
pub mod numerics;
pub mod nn;
pub mod objectives;
pub mod taxonomy;

pub use error::{Error, Result};
