//! File formats, configuration, experiment drivers and the CLI for the
//! hvrnn network. Everything stateful on disk lives here; the numerics live
//! in `hvrnn-core`.

pub mod commands;
pub mod config;
pub mod io;
pub mod runner;

pub use runner::RayonMap;
