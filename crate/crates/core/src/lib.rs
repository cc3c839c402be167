//! Plot-level yield estimation from hyperspectral field imagery.

pub mod cube;
pub mod endmember;
pub mod error;
pub mod gridmap;
pub mod mlp;
pub mod pipeline;
pub mod segment;
pub mod subplot;
pub mod synth;
pub mod unmix;

pub use error::{Error, Result};
