//! Command line and HTTP front ends for XAIHealth studies.

pub mod commands;
pub mod server;
pub mod view;
