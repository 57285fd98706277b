//! Artifact manifest: SHA-256 and size of every output file, plus free-form
//! run metadata. Serialized as TOML; entries are kept sorted by name so the
//! manifest of identical outputs is byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest";

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    pub sha256: String,
    pub bytes: u64,
    /// Sample count for dataset archives.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Manifest {
    pub meta: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn add_bytes(&mut self, name: &str, bytes: &[u8], samples: Option<u64>) {
        self.artifacts.insert(
            name.to_string(),
            Artifact { sha256: sha256_hex(bytes), bytes: bytes.len() as u64, samples },
        );
    }

    pub fn add_file(&mut self, dir: &Path, name: &str, samples: Option<u64>) -> Result<()> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.add_bytes(name, &bytes, samples);
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is always serializable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_NAME);
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_toml(&text)
    }

    /// Recomputes every checksum and reports the first mismatch.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (name, a) in &self.artifacts {
            let path = dir.join(name);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if sha256_hex(&bytes) != a.sha256 {
                return Err(Error::Data(format!("checksum mismatch for {}", path.display())));
            }
        }
        Ok(())
    }
}
