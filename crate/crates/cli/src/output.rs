//! Staged artifacts, written atomically together with a manifest once a
//! command has finished.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use mflq::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

#[derive(Debug, Default)]
pub struct Artifacts {
    items: Vec<(String, Vec<u8>)>,
}

#[derive(Serialize)]
struct Entry<'a> {
    file: &'a str,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    config_hash: &'a str,
    config: &'a C,
    exit_code: i32,
    artifacts: Vec<Entry<'a>>,
}

impl Artifacts {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.items.push((name.to_string(), bytes));
    }

    pub fn text(&mut self, name: &str, text: String) {
        self.add(name, text.into_bytes());
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.add(name, to_json(value)?);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|(n, _)| n.as_str())
    }

    /// Writes every artifact and then `manifest.json`, each through a
    /// temporary file renamed into place.
    pub fn commit<C: Serialize>(&self, dir: &Path, config: &C, config_hash: &str, exit_code: i32) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        for (name, bytes) in &self.items {
            write_atomic(dir, name, bytes)?;
        }
        let manifest = Manifest {
            config_hash,
            config,
            exit_code,
            artifacts: self
                .items
                .iter()
                .map(|(file, bytes)| Entry {
                    file,
                    bytes: bytes.len(),
                    sha256: sha256_hex(bytes),
                })
                .collect(),
        };
        write_atomic(dir, "manifest.json", &to_json(&manifest)?)
    }
}

pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", dir.join(name).display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(dir.join(name)).map_err(|e| io(e.error))?;
    Ok(())
}
