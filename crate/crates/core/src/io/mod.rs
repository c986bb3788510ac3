//! Files: time tags, scenarios, key-value reports and run manifests.

pub mod qtt;
pub mod scenario;

use std::fmt::Display;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub use qtt::{read_tags, write_tags, QttWriter};
pub use scenario::{Analysis, ArmConfig, DetectorConfig, IonConfig, Scenario};

/// Ordered `key = value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvReport {
    lines: Vec<(String, String)>,
}

impl KvReport {
    pub fn new() -> Self {
        KvReport::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) -> &mut Self {
        self.lines.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn extend_text(&mut self, text: &str) {
        for (k, v) in parse_kv(text) {
            self.lines.push((k, v));
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.lines {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub kind: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Every output of a run with the seed and config hash that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub seed: u64,
    pub config_sha256: String,
    pub version: String,
    pub outputs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        Ok(Manifest {
            scenario: scenario.name.clone(),
            seed: scenario.seed,
            config_sha256: sha256_hex(scenario.to_toml()?.as_bytes()),
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
        })
    }

    pub fn render(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| crate::Error::Config(e.to_string()))
    }
}

/// Writes run outputs into one directory and records them in a manifest.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    pub manifest: Manifest,
}

impl OutputDir {
    pub fn create(root: &Path, manifest: Manifest) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, kind: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.root.join(name), bytes)?;
        self.record(name, kind, bytes);
        Ok(())
    }

    /// Adds a file already written under the root.
    pub fn register(&mut self, name: &str, kind: &str) -> Result<()> {
        let bytes = std::fs::read(self.root.join(name))?;
        self.record(name, kind, &bytes);
        Ok(())
    }

    fn record(&mut self, name: &str, kind: &str, bytes: &[u8]) {
        self.manifest.outputs.retain(|e| e.path != name);
        self.manifest.outputs.push(ManifestEntry {
            path: name.to_string(),
            kind: kind.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }

    /// Writes `manifest.toml` and returns the manifest.
    pub fn finish(self) -> Result<Manifest> {
        let text = self.manifest.render()?;
        std::fs::write(self.root.join("manifest.toml"), text)?;
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut r = KvReport::new();
        r.push("a", 1.5).push("name", "x y");
        let text = r.render();
        assert_eq!(text, "a = 1.5\nname = x y\n");
        let mut back = KvReport::new();
        back.extend_text(&format!("# header\n\n{text}"));
        assert_eq!(back, r);
        assert_eq!(back.get_f64("a"), Some(1.5));
    }

    #[test]
    fn sha() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
