//! Experiment harness around the core library: configuration files,
//! checkpoints, CSV/SVG emission, and the subcommand implementations.

pub mod checkpoint;
pub mod config;
pub mod csv;
pub mod error;
pub mod runs;
pub mod svg;
