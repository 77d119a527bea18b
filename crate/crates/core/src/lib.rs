pub mod camera;
pub mod cli;
pub mod conditioning;
pub mod error;
pub mod flow;
pub mod imageio;
pub mod mask;
pub mod mesh;
pub mod metrics;
pub mod nn;
pub mod pose;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};
