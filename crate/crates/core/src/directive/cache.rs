//! Content-addressed storage for outputs of submission-independent steps.
//!
//! A key is `(config digest, node name, digest of the resolved prompt)`, so
//! editing a question or a template invalidates entries without bookkeeping.
//! [`DirCache`] stores one entry per file: `<node>-<key digest>.txt` holds the
//! raw output and `<node>-<key digest>.meta.json` a small metadata sidecar.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{fields_digest, sha256_hex};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt cache metadata {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub config_digest: String,
    pub node: String,
    pub prompt_digest: String,
}

impl CacheKey {
    pub fn new(config_digest: &str, node: &str, resolved_prompt: &str) -> Self {
        CacheKey {
            config_digest: config_digest.to_string(),
            node: node.to_string(),
            prompt_digest: sha256_hex(resolved_prompt),
        }
    }

    pub fn digest(&self) -> String {
        fields_digest([&self.config_digest, &self.node, &self.prompt_digest])
    }

    /// Filesystem-safe stem: sanitized node name plus the key digest.
    pub fn file_stem(&self) -> String {
        let node: String = self
            .node
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
            .take(64)
            .collect();
        format!("{node}-{}", self.digest())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntrySource {
    Provider,
    /// Written by an instructor to replace a generated output.
    Override,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub node: String,
    pub model: String,
    pub created_unix: u64,
    pub source: EntrySource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub output: String,
    pub meta: CacheMeta,
}

impl CacheEntry {
    pub fn new(node: &str, model: &str, output: impl Into<String>, source: EntrySource) -> Self {
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        CacheEntry {
            output: output.into(),
            meta: CacheMeta {
                node: node.to_string(),
                model: model.to_string(),
                created_unix,
                source,
            },
        }
    }
}

/// Safe for concurrent use; concurrent writers of one key are last-writer-wins.
pub trait StepCache: Send + Sync {
    fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>, CacheError>;
    fn put(&self, key: &CacheKey, entry: &CacheEntry) -> Result<(), CacheError>;
}

impl<C: StepCache + ?Sized> StepCache for std::sync::Arc<C> {
    fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>, CacheError> {
        (**self).get(key)
    }

    fn put(&self, key: &CacheKey, entry: &CacheEntry) -> Result<(), CacheError> {
        (**self).put(key, entry)
    }
}

/// Cache that never stores anything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoCache;

impl StepCache for NoCache {
    fn get(&self, _key: &CacheKey) -> Result<Option<CacheEntry>, CacheError> {
        Ok(None)
    }

    fn put(&self, _key: &CacheKey, _entry: &CacheEntry) -> Result<(), CacheError> {
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct MemoryCache {
    entries: RwLock<HashMap<CacheKey, CacheEntry>>,
}

impl MemoryCache {
    pub fn new() -> Self {
        MemoryCache::default()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl StepCache for MemoryCache {
    fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>, CacheError> {
        Ok(self.entries.read().unwrap().get(key).cloned())
    }

    fn put(&self, key: &CacheKey, entry: &CacheEntry) -> Result<(), CacheError> {
        self.entries
            .write()
            .unwrap()
            .insert(key.clone(), entry.clone());
        Ok(())
    }
}

#[derive(Debug)]
pub struct DirCache {
    root: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl DirCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|source| CacheError::Io {
            path: root.clone(),
            source,
        })?;
        Ok(DirCache { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn output_path(&self, key: &CacheKey) -> PathBuf {
        self.root.join(format!("{}.txt", key.file_stem()))
    }

    fn meta_path(&self, key: &CacheKey) -> PathBuf {
        self.root.join(format!("{}.meta.json", key.file_stem()))
    }

    /// Write via a unique temporary file and rename, so readers never see a
    /// partial entry.
    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), CacheError> {
        let io = |source| CacheError::Io {
            path: path.to_path_buf(),
            source,
        };
        let tmp = self.root.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut file = fs::File::create(&tmp).map_err(io)?;
        file.write_all(bytes).map_err(io)?;
        file.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }
}

impl StepCache for DirCache {
    fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>, CacheError> {
        let path = self.output_path(key);
        let output = match fs::read_to_string(&path) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(CacheError::Io { path, source }),
        };
        let meta_path = self.meta_path(key);
        let meta = match fs::read_to_string(&meta_path) {
            Ok(raw) => serde_json::from_str(&raw).map_err(|e| CacheError::Corrupt {
                path: meta_path,
                message: e.to_string(),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => CacheMeta {
                node: key.node.clone(),
                model: String::new(),
                created_unix: 0,
                source: EntrySource::Provider,
            },
            Err(source) => return Err(CacheError::Io { path: meta_path, source }),
        };
        Ok(Some(CacheEntry { output, meta }))
    }

    fn put(&self, key: &CacheKey, entry: &CacheEntry) -> Result<(), CacheError> {
        let meta = serde_json::to_vec_pretty(&entry.meta).expect("meta serialization");
        self.write_atomic(&self.meta_path(key), &meta)?;
        // The output file is the commit point for readers.
        self.write_atomic(&self.output_path(key), entry.output.as_bytes())
    }
}
