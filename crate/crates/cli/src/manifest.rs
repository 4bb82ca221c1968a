use std::collections::BTreeMap;
use std::path::Path;
use std::time::SystemTime;

use chrono::{DateTime, Utc};
use serde::Serialize;

use locgclstm::io::{file_digest, write_atomic};
use locgclstm::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command run, written as `manifest.json` in its output
/// directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
}

fn now() -> String {
    DateTime::<Utc>::from(SystemTime::now()).to_rfc3339()
}

impl RunManifest {
    pub fn start(command: &str, seed: Option<u64>, config: impl Serialize) -> Self {
        RunManifest {
            command: command.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            seed,
            config: serde_json::to_value(config).expect("config serializes"),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            started_at: now(),
            finished_at: String::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_owned());
    }

    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.finished_at = now();
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())
    }
}
