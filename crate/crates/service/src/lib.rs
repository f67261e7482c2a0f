//! HTTP session service and operator CLI for the dialog engine.

pub mod backends;
pub mod cli;
pub mod config;
pub mod server;
