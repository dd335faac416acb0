//! Command-line entry points and the HTTP service for live interactive
//! translation sessions.

pub mod cli;
pub mod config;
pub mod http;
pub mod service;
