//! Run manifests: a content-addressed record of what produced an
//! artifact, embedded into every output file so runs can be traced and
//! reproduced.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::HyperConfig;
use crate::error::Result;

/// Bumped whenever any artifact format changes shape.
pub const ARTIFACT_VERSION: u32 = 1;

/// Everything needed to reproduce a run. Two runs with equal manifests
/// must produce equal metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: u32,
    /// Subcommand that produced the artifact.
    pub command: String,
    pub config: HyperConfig,
    pub seeds: Vec<u64>,
    /// Content hash of the input dataset (or a synthetic descriptor).
    pub dataset_fingerprint: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: HyperConfig,
        seeds: Vec<u64>,
        dataset_fingerprint: String,
    ) -> RunManifest {
        RunManifest {
            artifact_version: ARTIFACT_VERSION,
            command: command.to_string(),
            config,
            seeds,
            dataset_fingerprint,
            outputs: Vec::new(),
        }
    }

    /// Hex digest over the manifest's canonical JSON form. Field order
    /// follows the struct declaration, so the digest is stable.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("manifest always serializes");
        hex_digest(json.as_bytes())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of raw bytes, lowercase hex.
pub fn fingerprint_bytes(bytes: &[u8]) -> String {
    hex_digest(bytes)
}

/// SHA-256 of a file's contents, lowercase hex.
pub fn fingerprint_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(fingerprint_bytes(&bytes))
}

/// Descriptor standing in for a file fingerprint when the dataset was
/// generated in-process.
pub fn synthetic_fingerprint(num_topics: usize, per_topic: usize, dup_rate: f64, seed: u64) -> String {
    format!("synthetic:t{num_topics}:r{per_topic}:d{dup_rate}:s{seed}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> RunManifest {
        RunManifest::new(
            "train",
            HyperConfig::tiny(),
            vec![1, 2, 3],
            "ff00".into(),
        )
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = manifest();
        let b = a.clone();
        assert_eq!(a.hash(), b.hash());

        let mut c = manifest();
        c.seeds.push(4);
        assert_ne!(a.hash(), c.hash());

        let mut d = manifest();
        d.config.lambda = 0.25;
        assert_ne!(a.hash(), d.hash());
    }

    #[test]
    fn hash_is_lowercase_hex() {
        let h = manifest().hash();
        assert_eq!(h.len(), 64);
        assert!(h.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
    }

    #[test]
    fn fingerprint_matches_known_vectors() {
        assert_eq!(
            fingerprint_bytes(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            fingerprint_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn file_fingerprint_reads_contents() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), b"abc").unwrap();
        assert_eq!(
            fingerprint_file(f.path()).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn round_trips_through_json() {
        let m = manifest();
        let json = serde_json::to_string(&m).unwrap();
        let back: RunManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.hash(), back.hash());
    }

    #[test]
    fn synthetic_descriptor_is_deterministic() {
        assert_eq!(synthetic_fingerprint(5, 40, 0.2, 9), "synthetic:t5:r40:d0.2:s9");
    }
}
