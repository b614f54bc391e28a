use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_VERSION: u32 = 1;
const LOCK_NAME: &str = ".txnet.lock";

pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, CliError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| CliError::Data(format!("cannot create workdir {}: {e}", root.display())))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        let rel = rel.as_ref();
        if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            self.root.join(rel)
        }
    }

    /// Name recorded in manifests: workdir-relative when possible.
    pub fn display_name(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    /// Takes the per-workdir lock; released when the guard drops.
    pub fn lock(&self) -> Result<LockGuard, CliError> {
        let path = self.root.join(LOCK_NAME);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Data(format!(
                "workdir {} is locked by another command (remove {} if no command is running)",
                self.root.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::Data(format!("cannot create lock {}: {e}", path.display()))),
        }
    }

    /// Creates parent directories and writes `bytes`.
    pub fn write(&self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&p, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", p.display())))?;
        Ok(p)
    }

    /// Opens an artifact, naming the command that produces it when absent.
    pub fn require(&self, rel: impl AsRef<Path>, producer: &str) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::missing_artifact(&p, producer))
        }
    }
}

pub struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(p: &Path) -> Result<String, CliError> {
    let bytes = fs::read(p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Record of one command run. `hash` covers everything except timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub command: String,
    pub tool_version: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub timings_ms: BTreeMap<String, u64>,
    pub hash: String,
}

impl Manifest {
    pub fn new(command: &str, config_sha256: String, seeds: &[(&str, u64)]) -> Self {
        Self {
            manifest_version: MANIFEST_VERSION,
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256,
            seeds: seeds.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
            hash: String::new(),
        }
    }

    pub fn add_input(&mut self, wd: &Workdir, p: &Path) -> Result<(), CliError> {
        self.inputs.insert(wd.display_name(p), file_sha256(p)?);
        Ok(())
    }

    pub fn add_output(&mut self, wd: &Workdir, p: &Path) -> Result<(), CliError> {
        self.outputs.insert(wd.display_name(p), file_sha256(p)?);
        Ok(())
    }

    pub fn compute_hash(&self) -> String {
        let mut stripped = self.clone();
        stripped.timings_ms.clear();
        stripped.hash.clear();
        sha256_hex(&serde_json::to_vec(&stripped).expect("manifest serializes"))
    }

    pub fn seal(&mut self) {
        self.hash = self.compute_hash();
    }
}
