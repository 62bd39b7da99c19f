//! Content-addressed artifact storage.
//!
//! Objects are immutable byte payloads named by the SHA-256 digest of their
//! contents. The on-disk backend lays objects out as
//! `<root>/objects/<first two hex chars>/<full hex digest>` with the raw
//! payload and no envelope. Nothing is ever deleted or rewritten.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// SHA-256 digest identifying an artifact.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentHash([u8; 32]);

impl ContentHash {
    pub const ALGORITHM: &'static str = "sha-256";

    pub fn of(payload: &[u8]) -> Self {
        Self(Sha256::digest(payload).into())
    }

    pub fn from_digest(digest: [u8; 32]) -> Self {
        Self(digest)
    }

    pub fn digest(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First 12 hex characters, for human-facing output.
    pub fn short(&self) -> String {
        self.to_hex()[..12].to_string()
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", self.to_hex())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid content hash {0:?}: expected 64 lowercase hex characters")]
pub struct InvalidHash(pub String);

impl FromStr for ContentHash {
    type Err = InvalidHash;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lowercase = s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if s.len() != 64 || !lowercase {
            return Err(InvalidHash(s.to_string()));
        }
        let mut digest = [0u8; 32];
        hex::decode_to_slice(s, &mut digest).map_err(|_| InvalidHash(s.to_string()))?;
        Ok(Self(digest))
    }
}

impl Serialize for ContentHash {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    /// The hash is referenced but the object is absent: a provenance violation.
    #[error("artifact {0} not found in store")]
    NotFound(ContentHash),
    #[error("artifact store I/O failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Result of re-hashing every stored object.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub checked: usize,
    /// `(object name, digest actually found)` for every object whose bytes no
    /// longer match its name.
    pub mismatches: Vec<(String, ContentHash)>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty()
    }
}

#[derive(Debug)]
enum Backend {
    Memory(RwLock<BTreeMap<ContentHash, Arc<[u8]>>>),
    Disk { root: PathBuf },
}

/// Append-only content-addressed store. Cloning shares the underlying objects.
#[derive(Debug, Clone)]
pub struct ArtifactStore {
    backend: Arc<Backend>,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ArtifactStore {
    pub fn in_memory() -> Self {
        Self {
            backend: Arc::new(Backend::Memory(RwLock::new(BTreeMap::new()))),
        }
    }

    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let objects = root.join("objects");
        fs::create_dir_all(&objects).map_err(|source| StoreError::Io {
            path: objects.clone(),
            source,
        })?;
        Ok(Self {
            backend: Arc::new(Backend::Disk { root }),
        })
    }

    pub fn root(&self) -> Option<&Path> {
        match &*self.backend {
            Backend::Disk { root } => Some(root),
            Backend::Memory(_) => None,
        }
    }

    /// Path an object lives at on disk (`None` for in-memory stores).
    pub fn object_path(&self, hash: &ContentHash) -> Option<PathBuf> {
        self.root().map(|root| object_path(root, hash))
    }

    pub fn put(&self, payload: &[u8]) -> Result<ContentHash, StoreError> {
        let hash = ContentHash::of(payload);
        match &*self.backend {
            Backend::Memory(map) => {
                let mut map = map.write().expect("artifact store lock poisoned");
                map.entry(hash).or_insert_with(|| Arc::from(payload));
            }
            Backend::Disk { root } => {
                let path = object_path(root, &hash);
                if !path.exists() {
                    write_atomically(&path, payload)?;
                }
            }
        }
        Ok(hash)
    }

    pub fn get(&self, hash: &ContentHash) -> Result<Vec<u8>, StoreError> {
        match &*self.backend {
            Backend::Memory(map) => map
                .read()
                .expect("artifact store lock poisoned")
                .get(hash)
                .map(|bytes| bytes.to_vec())
                .ok_or(StoreError::NotFound(*hash)),
            Backend::Disk { root } => {
                let path = object_path(root, hash);
                fs::read(&path).map_err(|source| {
                    if source.kind() == io::ErrorKind::NotFound {
                        StoreError::NotFound(*hash)
                    } else {
                        StoreError::Io { path, source }
                    }
                })
            }
        }
    }

    pub fn contains(&self, hash: &ContentHash) -> bool {
        match &*self.backend {
            Backend::Memory(map) => map
                .read()
                .expect("artifact store lock poisoned")
                .contains_key(hash),
            Backend::Disk { root } => object_path(root, hash).is_file(),
        }
    }

    /// Number of stored objects.
    pub fn len(&self) -> Result<usize, StoreError> {
        Ok(self.object_names()?.len())
    }

    pub fn is_empty(&self) -> Result<bool, StoreError> {
        Ok(self.len()? == 0)
    }

    /// Recomputes every object's digest and compares it with the object's name.
    pub fn audit(&self) -> Result<AuditReport, StoreError> {
        let mut report = AuditReport::default();
        match &*self.backend {
            Backend::Memory(map) => {
                for (name, bytes) in map.read().expect("artifact store lock poisoned").iter() {
                    report.checked += 1;
                    let actual = ContentHash::of(bytes);
                    if actual != *name {
                        report.mismatches.push((name.to_hex(), actual));
                    }
                }
            }
            Backend::Disk { root } => {
                for name in self.object_names()? {
                    let path = root.join("objects").join(&name[..2]).join(&name);
                    let bytes = fs::read(&path).map_err(|source| StoreError::Io {
                        path: path.clone(),
                        source,
                    })?;
                    report.checked += 1;
                    let actual = ContentHash::of(&bytes);
                    if actual.to_hex() != name {
                        report.mismatches.push((name, actual));
                    }
                }
            }
        }
        Ok(report)
    }

    fn object_names(&self) -> Result<Vec<String>, StoreError> {
        match &*self.backend {
            Backend::Memory(map) => Ok(map
                .read()
                .expect("artifact store lock poisoned")
                .keys()
                .map(ContentHash::to_hex)
                .collect()),
            Backend::Disk { root } => {
                let objects = root.join("objects");
                let io_err = |path: &Path| {
                    let path = path.to_path_buf();
                    move |source| StoreError::Io { path, source }
                };
                let mut names = Vec::new();
                for fan in fs::read_dir(&objects).map_err(io_err(&objects))? {
                    let fan = fan.map_err(io_err(&objects))?.path();
                    if !fan.is_dir() {
                        continue;
                    }
                    for entry in fs::read_dir(&fan).map_err(io_err(&fan))? {
                        let entry = entry.map_err(io_err(&fan))?;
                        let name = entry.file_name().to_string_lossy().into_owned();
                        if name.len() == 64 && !name.starts_with('.') {
                            names.push(name);
                        }
                    }
                }
                names.sort();
                Ok(names)
            }
        }
    }
}

fn object_path(root: &Path, hash: &ContentHash) -> PathBuf {
    let hex = hash.to_hex();
    root.join("objects").join(&hex[..2]).join(hex)
}

fn write_atomically(path: &Path, payload: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().expect("object path has a fan-out parent");
    let io_err = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(io_err)?;
    let tmp = dir.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let mut file = fs::File::create(&tmp).map_err(io_err)?;
    file.write_all(payload).map_err(io_err)?;
    file.sync_all().map_err(io_err)?;
    drop(file);
    // Concurrent writers of the same digest race to rename identical bytes.
    fs::rename(&tmp, path).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Digests below were computed with coreutils `sha256sum`.
    const EMPTY: &str = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";
    const ABC: &str = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";

    #[test]
    fn empty_payload_hash() {
        let store = ArtifactStore::in_memory();
        assert_eq!(store.put(b"").unwrap().to_hex(), EMPTY);
    }

    #[test]
    fn put_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        let a = store.put(b"abc").unwrap();
        let b = store.put(b"abc").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_hex(), ABC);
        assert_eq!(store.len().unwrap(), 1);
        assert!(dir.path().join("objects/ba").join(ABC).is_file());
    }

    #[test]
    fn distinct_payloads_distinct_hashes() {
        let store = ArtifactStore::in_memory();
        let a = store.put(b"abc").unwrap();
        let b = store.put(b"abd").unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn get_unknown_is_not_found() {
        for store in [ArtifactStore::in_memory(), {
            let dir = tempfile::tempdir().unwrap().keep();
            ArtifactStore::open(dir).unwrap()
        }] {
            let missing: ContentHash = ABC.parse().unwrap();
            assert!(matches!(store.get(&missing), Err(StoreError::NotFound(h)) if h == missing));
        }
    }

    #[test]
    fn audit_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        let hash = store.put(b"payload").unwrap();
        store.put(b"other").unwrap();
        assert!(store.audit().unwrap().is_clean());
        fs::write(store.object_path(&hash).unwrap(), b"paylaod").unwrap();
        let report = store.audit().unwrap();
        assert_eq!(report.checked, 2);
        assert_eq!(report.mismatches.len(), 1);
        assert_eq!(report.mismatches[0].0, hash.to_hex());
    }

    #[test]
    fn hash_parsing_rejects_bad_input() {
        assert!("E3B0".parse::<ContentHash>().is_err());
        assert!(EMPTY.to_uppercase().parse::<ContentHash>().is_err());
        assert_eq!(EMPTY.parse::<ContentHash>().unwrap().to_hex(), EMPTY);
    }
}
