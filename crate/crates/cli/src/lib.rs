//! Command implementations, configuration and the HTTP service behind the
//! `bacscope` binary.

pub mod commands;
pub mod config;
pub mod server;
