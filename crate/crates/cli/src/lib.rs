//! The `breathwatch` command: node simulator, gateway and report tools.

pub mod app;
pub mod report;
