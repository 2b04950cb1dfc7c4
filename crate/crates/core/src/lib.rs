pub mod audio;
pub mod cli;
pub mod curves;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod neural;
pub mod service;
pub mod trainer;

pub use error::{Error, Result};
