//! Run metadata embedded in every output: tool version, seed and SHA-256
//! digests of the inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub tool_version: &'static str,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
}

impl RunMeta {
    pub fn new(seed: u64) -> Self {
        RunMeta {
            tool_version: env!("CARGO_PKG_VERSION"),
            seed,
            inputs: BTreeMap::new(),
        }
    }

    pub fn add_file(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Digest of in-memory input that has no file (e.g. the bundled lens fixture).
    pub fn add_bytes(&mut self, label: &str, bytes: &[u8]) {
        self.inputs.insert(label.to_string(), sha256_hex(bytes));
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serializes `value` as pretty JSON with a top-level `meta` object.
pub fn write_json_with_meta(path: &Path, value: &impl Serialize, meta: &RunMeta) -> Result<(), CliError> {
    let mut v = serde_json::to_value(value).map_err(|e| CliError::Internal(e.to_string()))?;
    match v.as_object_mut() {
        Some(obj) => {
            obj.insert(
                "meta".into(),
                serde_json::to_value(meta).map_err(|e| CliError::Internal(e.to_string()))?,
            );
        }
        None => {
            v = serde_json::json!({ "value": v, "meta": meta });
        }
    }
    let text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(path, format!("{text}\n").as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Manifest for a run directory: run metadata plus the digest of every
/// produced file. Image files stay byte-exact, so their metadata lives here.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, T: Serialize> {
    pub meta: &'a RunMeta,
    pub outputs: BTreeMap<String, String>,
    #[serde(flatten)]
    pub extra: T,
}

pub fn write_manifest<T: Serialize>(dir: &Path, meta: &RunMeta, outputs: &[PathBuf], extra: T) -> Result<(), CliError> {
    let mut digests = BTreeMap::new();
    for p in outputs {
        let bytes = fs::read(p).map_err(|e| CliError::io(p, e))?;
        let name = p
            .file_name()
            .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
        digests.insert(name, sha256_hex(&bytes));
    }
    let manifest = Manifest {
        meta,
        outputs: digests,
        extra,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(&dir.join("manifest.json"), format!("{text}\n").as_bytes())
}
