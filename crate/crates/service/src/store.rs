//! Small namespaced key-value store for questions and traces.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid key `{0}`")]
    InvalidKey(String),
    #[error("store i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt value {namespace}/{key}: {message}")]
    Corrupt {
        namespace: String,
        key: String,
        message: String,
    },
}

pub trait KvStore: Send + Sync {
    fn get(&self, namespace: &str, key: &str) -> Result<Option<Vec<u8>>, StoreError>;
    fn put(&self, namespace: &str, key: &str, value: &[u8]) -> Result<(), StoreError>;
    /// Keys in `namespace`, sorted.
    fn keys(&self, namespace: &str) -> Result<Vec<String>, StoreError>;
}

/// Keys and namespaces double as file names.
pub fn is_valid_key(key: &str) -> bool {
    !key.is_empty()
        && key.len() <= 128
        && !key.starts_with('.')
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn check(namespace: &str, key: &str) -> Result<(), StoreError> {
    for k in [namespace, key] {
        if !is_valid_key(k) {
            return Err(StoreError::InvalidKey(k.to_string()));
        }
    }
    Ok(())
}

pub fn get_json<T: DeserializeOwned>(
    store: &dyn KvStore,
    namespace: &str,
    key: &str,
) -> Result<Option<T>, StoreError> {
    store
        .get(namespace, key)?
        .map(|bytes| {
            serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
                namespace: namespace.to_string(),
                key: key.to_string(),
                message: e.to_string(),
            })
        })
        .transpose()
}

pub fn put_json<T: Serialize>(
    store: &dyn KvStore,
    namespace: &str,
    key: &str,
    value: &T,
) -> Result<(), StoreError> {
    let bytes = serde_json::to_vec_pretty(value).expect("store values serialize");
    store.put(namespace, key, &bytes)
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    entries: RwLock<BTreeMap<(String, String), Vec<u8>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        MemoryStore::default()
    }
}

impl KvStore for MemoryStore {
    fn get(&self, namespace: &str, key: &str) -> Result<Option<Vec<u8>>, StoreError> {
        check(namespace, key)?;
        Ok(self
            .entries
            .read()
            .unwrap()
            .get(&(namespace.to_string(), key.to_string()))
            .cloned())
    }

    fn put(&self, namespace: &str, key: &str, value: &[u8]) -> Result<(), StoreError> {
        check(namespace, key)?;
        self.entries
            .write()
            .unwrap()
            .insert((namespace.to_string(), key.to_string()), value.to_vec());
        Ok(())
    }

    fn keys(&self, namespace: &str) -> Result<Vec<String>, StoreError> {
        Ok(self
            .entries
            .read()
            .unwrap()
            .keys()
            .filter(|(ns, _)| ns == namespace)
            .map(|(_, k)| k.clone())
            .collect())
    }
}

/// One directory per namespace, one `<key>.json` file per value.
#[derive(Debug)]
pub struct DirStore {
    root: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl DirStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|source| StoreError::Io {
            path: root.clone(),
            source,
        })?;
        Ok(DirStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, namespace: &str, key: &str) -> PathBuf {
        self.root.join(namespace).join(format!("{key}.json"))
    }
}

impl KvStore for DirStore {
    fn get(&self, namespace: &str, key: &str) -> Result<Option<Vec<u8>>, StoreError> {
        check(namespace, key)?;
        let path = self.path(namespace, key);
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(StoreError::Io { path, source }),
        }
    }

    fn put(&self, namespace: &str, key: &str, value: &[u8]) -> Result<(), StoreError> {
        check(namespace, key)?;
        let dir = self.root.join(namespace);
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| StoreError::Io { path, source }
        };
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let tmp = dir.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut file = fs::File::create(&tmp).map_err(io(&tmp))?;
        file.write_all(value).map_err(io(&tmp))?;
        file.sync_all().map_err(io(&tmp))?;
        let path = self.path(namespace, key);
        fs::rename(&tmp, &path).map_err(io(&path))
    }

    fn keys(&self, namespace: &str) -> Result<Vec<String>, StoreError> {
        if !is_valid_key(namespace) {
            return Err(StoreError::InvalidKey(namespace.to_string()));
        }
        let dir = self.root.join(namespace);
        let entries = match fs::read_dir(&dir) {
            Ok(entries) => entries,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(StoreError::Io { path: dir, source }),
        };
        let mut keys = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|source| StoreError::Io {
                path: dir.clone(),
                source,
            })?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(key) = name.strip_suffix(".json") {
                if is_valid_key(key) {
                    keys.push(key.to_string());
                }
            }
        }
        keys.sort();
        Ok(keys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exercise(store: &dyn KvStore) {
        assert_eq!(store.get("q", "a").unwrap(), None);
        store.put("q", "b", b"2").unwrap();
        store.put("q", "a", b"1").unwrap();
        store.put("t", "a", b"x").unwrap();
        assert_eq!(store.get("q", "a").unwrap().as_deref(), Some(&b"1"[..]));
        assert_eq!(store.keys("q").unwrap(), ["a", "b"]);
        assert!(store.keys("empty").unwrap().is_empty());
        assert!(matches!(store.put("q", "../x", b""), Err(StoreError::InvalidKey(_))));
        put_json(store, "j", "v", &vec![1, 2, 3]).unwrap();
        assert_eq!(get_json::<Vec<i32>>(store, "j", "v").unwrap(), Some(vec![1, 2, 3]));
    }

    #[test]
    fn memory_store() {
        exercise(&MemoryStore::new());
    }

    #[test]
    fn dir_store_persists() {
        let dir = tempfile::tempdir().unwrap();
        exercise(&DirStore::open(dir.path()).unwrap());
        let reopened = DirStore::open(dir.path()).unwrap();
        assert_eq!(reopened.keys("q").unwrap(), ["a", "b"]);
    }
}
