//! Command-line companion to `pointfit-core`: file formats, a threaded task
//! pool, key=value config files, and the `gen-data`, `pseudo-render`, `fit`,
//! `eval`, and `view-config` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod threads;
