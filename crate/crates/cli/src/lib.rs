//! Library surface of the CLI so integration tests can drive the pipeline
//! stages directly.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use commands::{cmd_attack, cmd_eval, cmd_gen_assets, cmd_train_detector};
pub use config::RunConfig;
pub use error::CliError;
