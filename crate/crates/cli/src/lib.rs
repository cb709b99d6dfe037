//! HTTP service and command line around `loopchat-core`.

pub mod commands;
pub mod config;
pub mod engine;
pub mod service;
