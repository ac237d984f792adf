pub mod calibration;
pub mod camera;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod elastic;
pub mod error;
pub mod features;
pub mod flow;
pub mod geom;
pub mod labels;
pub mod metrics;
pub mod nn;
pub mod plot;

pub use error::{Error, Result};
