//! Command-line interface and HTTP service over the assertflow core.

pub mod cli;
pub mod ops;
pub mod server;
