//! Content digests used for provenance.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the compact JSON encoding of `value`.
pub fn json_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable value"))
}

/// Scene and configuration digests carried by every output sidecar.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub scene_hash: String,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(scene_hash: impl Into<String>, config_hash: impl Into<String>) -> Self {
        Provenance { scene_hash: scene_hash.into(), config_hash: config_hash.into() }
    }

    /// Compares against `expected`; empty expected fields are not checked.
    pub fn check(&self, expected: &Provenance, path: &std::path::Path) -> crate::Result<()> {
        for (what, want, got) in [("scene hash", &expected.scene_hash, &self.scene_hash), ("config hash", &expected.config_hash, &self.config_hash)] {
            if !want.is_empty() && want != got {
                return Err(crate::Error::Mismatch { path: path.to_path_buf(), what, expected: want.clone(), found: got.clone() });
            }
        }
        Ok(())
    }
}
