//! Experiment orchestration for the `axnorm` command-line tool.

pub mod config;
pub mod plotdata;
pub mod rank;
pub mod stats;
pub mod sweep;
pub mod toy;
pub mod validate;
