//! Library surface of the command-line tool, so integration tests drive
//! exactly the code paths the binary runs.

pub mod commands;
pub mod config;
