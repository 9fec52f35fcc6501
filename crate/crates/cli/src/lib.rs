//! Library side of the `helioadapt` binary: command implementations, model
//! and selection persistence, run manifests, the experiment harness, and
//! report rendering. The binary in `main.rs` is only the clap surface over
//! [`commands`].

pub mod artifact;
pub mod commands;
pub mod config;
pub mod errors;
pub mod experiment;
pub mod manifest;
pub mod pipeline;
pub mod report;
