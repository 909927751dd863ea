//! Run directories: atomic file writes, `config.json` and `manifest.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub files: Vec<ManifestEntry>,
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub struct RunDir {
    root: PathBuf,
    command: String,
    files: Vec<String>,
}

/// What to do with an existing directory.
pub enum Prepared {
    Fresh(RunDir),
    /// Finished earlier with the same configuration.
    Complete,
}

impl RunDir {
    /// Creates the directory and records the configuration. With `resume`, a
    /// directory holding a manifest and an identical configuration is
    /// reported as complete; a different configuration is an error.
    pub fn prepare(root: &Path, command: &str, config: &RunConfig, resume: bool) -> CliResult<Prepared> {
        let config_path = root.join(CONFIG_FILE);
        if resume && config_path.exists() {
            let old: RunConfig = serde_json::from_slice(&fs::read(&config_path)?)
                .map_err(|e| CliError::Config(format!("existing {}: {e}", config_path.display())))?;
            if &old != config {
                return Err(CliError::Config(format!(
                    "{} was produced with a different configuration",
                    root.display()
                )));
            }
            if root.join(MANIFEST_FILE).exists() {
                return Ok(Prepared::Complete);
            }
        }
        fs::create_dir_all(root)?;
        let _ = fs::remove_file(root.join(MANIFEST_FILE));
        let mut dir = RunDir { root: root.to_path_buf(), command: command.to_string(), files: Vec::new() };
        dir.write_json(CONFIG_FILE, config)?;
        Ok(Prepared::Fresh(dir))
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomic(&path, bytes)?;
        self.record(name);
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(mortss::Error::from)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Buffers whatever `f` writes, then stores it atomically.
    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> mortss::Result<()>,
    ) -> CliResult<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    /// Notes a file written by other means, relative to the root.
    pub fn record(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    /// Writes the manifest, marking the run complete.
    pub fn finish(self) -> CliResult<PathBuf> {
        let mut files = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let bytes = fs::metadata(self.root.join(name))?.len();
            files.push(ManifestEntry { path: name.clone(), bytes });
        }
        let manifest = Manifest { command: self.command, files };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(mortss::Error::from)?;
        text.push('\n');
        write_atomic(&self.root.join(MANIFEST_FILE), text.as_bytes())?;
        Ok(self.root)
    }
}
