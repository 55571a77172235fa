//! File formats, run configuration and the command line for `setconv-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod error;
pub mod pnm;
pub mod tables;

pub use error::{exit, Error, Result};
