//! HTTP service and command line for the publication agent.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod setup;
