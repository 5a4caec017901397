//! Run directories: atomic writes, overwrite protection and manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xmc_core::{Error, Result};

use crate::command::Command;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to reproduce one command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: Command,
    /// Fully resolved configuration, TOML.
    pub config: String,
    pub inputs: Vec<FileHash>,
    /// Paths relative to the run directory.
    pub outputs: Vec<FileHash>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_slice(&read(path)?).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Errors if any recorded input is missing or has changed.
    pub fn check_inputs(&self) -> Result<()> {
        for f in &self.inputs {
            let got = sha256_hex(&read(&f.path)?);
            if got != f.sha256 {
                return Err(Error::Config(format!(
                    "input {} changed since the manifest was written",
                    f.path.display()
                )));
            }
        }
        Ok(())
    }
}

/// Collects a command's outputs in memory and commits them together.
pub struct RunDir {
    dir: PathBuf,
    force: bool,
    inputs: Vec<FileHash>,
    outputs: Vec<(String, Vec<u8>)>,
}

impl RunDir {
    pub fn new(dir: &Path, force: bool) -> Self {
        Self {
            dir: dir.to_path_buf(),
            force,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Fails before any work starts if an output exists and `--force` is off.
    pub fn claim(&self, names: &[String]) -> Result<()> {
        if self.force {
            return Ok(());
        }
        for n in names {
            let p = self.path(n);
            if p.exists() {
                return Err(Error::Usage(format!("{} exists; pass --force to overwrite", p.display())));
            }
        }
        Ok(())
    }

    /// Reads an input and records its hash. The recorded path is absolute.
    pub fn input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = read(path)?;
        let abs = fs::canonicalize(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.inputs.push(FileHash {
            path: abs,
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn output(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.outputs.push((name.to_string(), bytes.into()));
    }

    /// Writes every output, then `<command>.manifest.json`, each through a
    /// temporary file renamed into place.
    pub fn commit(self, command: &Command, config: String) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir).map_err(|source| Error::Io {
            path: self.dir.clone(),
            source,
        })?;
        let mut hashes = Vec::new();
        for (name, bytes) in &self.outputs {
            write_atomic(&self.path(name), bytes)?;
            hashes.push(FileHash {
                path: PathBuf::from(name),
                sha256: sha256_hex(bytes),
            });
        }
        let path = self.path(&format!("{}.manifest.json", command.name()));
        let manifest = Manifest {
            command: command.clone(),
            config,
            inputs: self.inputs,
            outputs: hashes,
        };
        let mut text = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
        text.push(b'\n');
        write_atomic(&path, &text)?;
        Ok(path)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}
