pub mod config;
pub mod error;
pub mod run;
pub mod sweep;

pub use config::RunConfig;
pub use error::CliError;
