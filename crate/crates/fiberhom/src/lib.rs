//! Configuration, output formats and experiment drivers on top of `fiberhom-core`.

pub mod config;
pub mod experiments;
pub mod output;
