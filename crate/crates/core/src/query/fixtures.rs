//! Fixture source registry: the hermetic stand-in for the open web.
//!
//! URL-type queries resolve against this registry instead of the network.
//! A registry is either built in memory or loaded from a manifest file
//! listing `key <TAB> relative-path <TAB> sha256-hex` per line; content
//! digests are verified at load so a tampered fixture fails fast.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::QueryError;

#[derive(Debug, Default, Clone)]
pub struct FixtureRegistry {
    by_key: BTreeMap<String, String>,
    by_digest: BTreeMap<[u8; 32], String>,
}

impl FixtureRegistry {
    pub fn empty() -> Self {
        FixtureRegistry::default()
    }

    pub fn in_memory(entries: &[(&str, &str)]) -> Self {
        let mut registry = FixtureRegistry::default();
        for (key, content) in entries {
            registry.insert(key, content);
        }
        registry
    }

    pub fn insert(&mut self, key: &str, content: &str) {
        let digest: [u8; 32] = Sha256::digest(content.as_bytes()).into();
        self.by_key.insert(key.to_string(), content.to_string());
        self.by_digest.insert(digest, content.to_string());
    }

    /// Loads a tab-separated manifest; paths are resolved relative to the
    /// manifest's directory. Blank lines and lines starting with `#` are
    /// skipped.
    pub fn load_manifest(manifest_path: &Path) -> Result<Self, QueryError> {
        let io = |e: std::io::Error| {
            QueryError::FixtureLoad(format!("{}: {e}", manifest_path.display()))
        };
        let text = std::fs::read_to_string(manifest_path).map_err(io)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut registry = FixtureRegistry::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let (key, rel, digest_hex) = match (fields.next(), fields.next(), fields.next()) {
                (Some(k), Some(r), Some(d)) if fields.next().is_none() => (k, r, d),
                _ => {
                    return Err(QueryError::FixtureLoad(format!(
                        "manifest line {}: expected 3 tab-separated fields",
                        lineno + 1
                    )))
                }
            };
            let content = std::fs::read_to_string(base.join(rel))
                .map_err(|e| QueryError::FixtureLoad(format!("{rel}: {e}")))?;
            let actual: [u8; 32] = Sha256::digest(content.as_bytes()).into();
            let expected = hex::decode(digest_hex)
                .ok()
                .and_then(|b| <[u8; 32]>::try_from(b).ok())
                .ok_or_else(|| {
                    QueryError::FixtureLoad(format!("manifest line {}: bad digest", lineno + 1))
                })?;
            if actual != expected {
                return Err(QueryError::FixtureDigestMismatch {
                    key: key.to_string(),
                    expected: hex::encode(expected),
                    actual: hex::encode(actual),
                });
            }
            registry.by_key.insert(key.to_string(), content.clone());
            registry.by_digest.insert(actual, content);
        }
        Ok(registry)
    }

    pub fn get(&self, key: &str) -> Result<&str, QueryError> {
        self.by_key
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| QueryError::UnknownFixture(key.to_string()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.by_key.contains_key(key)
    }

    /// Content-addressed lookup for content-store queries.
    pub fn get_by_digest(&self, digest: &[u8; 32]) -> Result<&str, QueryError> {
        self.by_digest
            .get(digest)
            .map(String::as_str)
            .ok_or_else(|| QueryError::UnknownFixture(hex::encode(digest)))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.by_key.keys().map(String::as_str)
    }
}
