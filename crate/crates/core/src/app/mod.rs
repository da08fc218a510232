//! Scenario files, run bookkeeping and the subcommands behind the CLI.

pub mod commands;
pub mod io;
pub mod manifest;
pub mod scenario;

pub use commands::AppError;
