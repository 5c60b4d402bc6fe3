//! Command-line orchestration of null estimation, ε scans and reports.

pub mod cache;
pub mod commands;
pub mod config;
pub mod experiment;
pub mod report;
pub mod results;

pub use commands::{cmd_null, cmd_scan, prepare, RunOptions};
pub use experiment::CliError;
pub use report::cmd_report;
