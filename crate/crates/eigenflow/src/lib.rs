//! File formats, reports and parallel drivers for `eigenflow-core`, plus the
//! `eigenflow` command-line tool.

pub mod cli;
mod error;
pub mod manifest;
pub mod parallel;
pub mod report;
pub mod spec_file;

pub use error::Error;
