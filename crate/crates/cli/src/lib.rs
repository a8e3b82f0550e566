//! File formats, corpus handling and benchmark harness behind the `splineup`
//! command-line tool.

pub mod bench;
pub mod commands;
pub mod demo1d;
pub mod dump;
pub mod error;
pub mod png_io;
pub mod scene_file;

pub use error::{CliError, Result};
