use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

/// Everything needed to reproduce a run. Embedded in every JSON report.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub spec_path: Option<PathBuf>,
    pub spec_sha256: Option<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub wall_time_s: f64,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            args,
            spec_path: None,
            spec_sha256: None,
            seed: None,
            threads: None,
            wall_time_s: 0.0,
            outputs: Vec::new(),
        }
    }

    pub fn finish(&mut self, started: Instant) {
        self.wall_time_s = started.elapsed().as_secs_f64();
    }
}
