//! Operator CLI and HTTP service for gardens.

pub mod commands;
pub mod config;
pub mod server;
