//! Text-conditioned triplane generation at desk scale.

pub mod adversarial;
pub mod config;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod generator;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod render;
pub mod surface;
pub mod text;
pub mod tpa;
pub mod train;
pub mod triplane;

pub use error::{Error, Result};
