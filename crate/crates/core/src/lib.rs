pub mod data;
pub mod error;
pub mod estimator;
pub mod likelihood;
pub mod objective;
pub mod report;
pub mod search;
pub mod spec;
pub mod synth;

pub use error::{Error, Result};
