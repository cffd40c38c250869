//! Run manifests: every command records what it did — resolved settings,
//! input/output paths with SHA-256 checksums, wall-clock time — as a flat
//! ordered key=value file. `adsm --manifest <path>` replays the run from
//! those keys and verifies the recorded checksums on both sides.

use adsm_core::{Error, Result};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("{}: cannot checksum: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Ordered key=value builder; insertion order is the file order.
pub struct Manifest {
    entries: Vec<(String, String)>,
    started: std::time::Instant,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Manifest {
            entries: Vec::new(),
            started: std::time::Instant::now(),
        };
        m.put("command", command);
        m.put("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn put(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    /// Record a path under `<role>` plus its checksum under `sha256.<role>`.
    pub fn put_file(&mut self, role: &str, path: &Path) -> Result<()> {
        self.put(role, path.display());
        self.put(&format!("sha256.{role}"), sha256_file(path)?);
        Ok(())
    }

    /// Record settings as `cfg.<key>` lines from a flat key=value blob.
    pub fn put_cfg_block(&mut self, kv: &str) {
        for line in kv.lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.put(&format!("cfg.{k}"), v);
            }
        }
    }

    pub fn write(&mut self, path: &Path) -> Result<()> {
        self.put("elapsed_ms", self.started.elapsed().as_millis());
        let mut text = String::new();
        for (k, v) in &self.entries {
            writeln!(text, "{k}={v}").expect("string write");
        }
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// A manifest read back for replay: ordered pairs plus keyed access.
pub struct ReplayManifest {
    pub path: PathBuf,
    entries: Vec<(String, String)>,
}

impl ReplayManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("{}: cannot read manifest: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Data(format!(
                    "{}:{}: manifest line is not key=value",
                    path.display(),
                    ln + 1
                ))
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(ReplayManifest {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| {
                Error::Data(format!(
                    "{}: manifest missing key `{key}`",
                    self.path.display()
                ))
            })
    }

    /// All `cfg.*` entries with the prefix stripped, as one kv blob.
    pub fn cfg_block(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            if let Some(stripped) = k.strip_prefix("cfg.") {
                writeln!(s, "{stripped}={v}").expect("string write");
            }
        }
        s
    }

    /// Verify every `sha256.<role>` entry whose role matches the prefix.
    pub fn verify_checksums(&self, prefix: &str) -> Result<()> {
        for (k, want) in &self.entries {
            let Some(role) = k.strip_prefix("sha256.") else {
                continue;
            };
            if !role.starts_with(prefix) {
                continue;
            }
            let path = PathBuf::from(self.get(role)?);
            let got = sha256_file(&path)?;
            if got != *want {
                return Err(Error::Data(format!(
                    "{role} checksum mismatch for {}: manifest {want}, file {got}",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}
