//! Command implementations behind the `softavatar` binary.

pub mod commands;
pub mod config;
