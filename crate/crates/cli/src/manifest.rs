//! Run manifests: what was run, from which inputs, with which seeds, and
//! the hash of every file written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Derived seeds, by purpose.
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, InputFile>,
    /// Files written, relative to the output directory, with their hashes.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            tool: "bcilm".into(),
            version: env!("BCILM_VERSION").into(),
            command: command.into(),
            config_sha256: sha256_bytes(config.canonical().as_bytes()),
            seed: config.seed,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<String, CliError> {
        let sha256 = sha256_file(path)?;
        self.inputs.insert(
            role.into(),
            InputFile {
                path: path.display().to_string(),
                sha256: sha256.clone(),
            },
        );
        Ok(sha256)
    }

    pub fn read(dir: &Path) -> Result<Option<Self>, CliError> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// An output directory that remembers what was written into it.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Path for `name`, creating parent directories and recording it.
    pub fn file(&mut self, name: &str) -> Result<PathBuf, CliError> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(path)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.file(name)?;
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
    }

    /// Hashes every recorded file into the manifest and writes it.
    pub fn finish(self, mut manifest: Manifest) -> Result<(), CliError> {
        for name in &self.written {
            manifest
                .outputs
                .insert(name.clone(), sha256_file(&self.root.join(name))?);
        }
        let path = self.root.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }
}

/// Fails when `dir`'s manifest recorded a different file for `role` than
/// the one at `path`.
pub fn check_input(dir: &Path, role: &str, path: &Path) -> Result<(), CliError> {
    let Some(m) = Manifest::read(dir)? else {
        return Ok(());
    };
    let Some(recorded) = m.inputs.get(role) else {
        return Ok(());
    };
    let actual = sha256_file(path)?;
    if actual != recorded.sha256 {
        return Err(CliError::Config(format!(
            "{} does not match the {role} file that {} was fitted to ({})",
            path.display(),
            dir.display(),
            recorded.path
        )));
    }
    Ok(())
}
