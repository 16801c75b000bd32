use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::sha256_hex;

/// Enough to rerun an invocation and check that its artifacts come out identical.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub subcommand: &'static str,
    pub toolkit_version: &'static str,
    pub argv: Vec<String>,
    /// Input path to SHA-256 of its contents.
    pub configs: BTreeMap<String, String>,
    pub seeds: BTreeMap<&'static str, u64>,
    /// Artifact name to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(argv: &[String]) -> Self {
        Self {
            subcommand: "",
            toolkit_version: env!("CARGO_PKG_VERSION"),
            argv: argv.iter().skip(1).cloned().collect(),
            configs: BTreeMap::new(),
            seeds: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn config(&mut self, path: &Path, contents: &str) {
        self.configs.insert(path.display().to_string(), sha256_hex(contents.as_bytes()));
    }

    pub fn seed(&mut self, name: &'static str, seed: Option<u64>) {
        if let Some(s) = seed {
            self.seeds.insert(name, s);
        }
    }

    pub fn output(&mut self, name: &str, body: &str) {
        self.outputs.insert(name.to_string(), sha256_hex(body.as_bytes()));
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}
