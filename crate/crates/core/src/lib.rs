pub mod artifact;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod report;

pub use error::{Error, Result};
