//! Streaming polar-pillar lidar perception toolkit.

pub mod bench;
pub mod context;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod heads;
pub mod metrics;
pub mod pillars;
pub mod pipeline;
pub mod polar_layers;
pub mod postprocess;
pub mod rng;
pub mod stream;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
