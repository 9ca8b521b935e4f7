use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use hocle_core::fields_io::{FileEntry, OutputDir};
use serde::{Deserialize, Serialize};

use crate::config::Config;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Record of one run, written next to its outputs. The manifest itself is
/// the only file in the directory that is not listed in `files`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Config,
    pub tolerances: BTreeMap<String, f64>,
    pub determinism: String,
    pub files: Vec<FileEntry>,
    pub timings: Vec<Timing>,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub label: String,
    pub seconds: f64,
}

/// A hard invariant evaluated during the run: `value ≤ limit`. A non-finite
/// value is stored as `None` and fails.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    pub limit: f64,
    pub pass: bool,
}

const DETERMINISM: &str = "No randomness at run time (synthetic media use a fixed ChaCha8 seed from the config). \
Transport updates read only their own stencil, so results do not depend on the thread count; \
sparse factorizations may differ in the last bits between thread counts.";

impl RunManifest {
    pub fn new(subcommand: &str, config: &Config) -> Self {
        Self {
            subcommand: subcommand.into(),
            config: config.clone(),
            tolerances: BTreeMap::new(),
            determinism: DETERMINISM.into(),
            files: Vec::new(),
            timings: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn tolerance(&mut self, name: &str, value: f64) {
        self.tolerances.insert(name.into(), value);
    }

    pub fn check(&mut self, name: impl Into<String>, value: f64, limit: f64) {
        let pass = value <= limit;
        let value = value.is_finite().then_some(value);
        self.checks.push(Check { name: name.into(), value, limit, pass });
    }

    pub fn time<T>(&mut self, label: impl Into<String>, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(Timing { label: label.into(), seconds: start.elapsed().as_secs_f64() });
        out
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn finish(mut self, out: &OutputDir) -> std::io::Result<Self> {
        self.files = out.files.clone();
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(out.root.join(MANIFEST_NAME), text)?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let path = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
