//! Configuration and orchestration behind the `rollfolio` binary.

pub mod config;
pub mod pipeline;
