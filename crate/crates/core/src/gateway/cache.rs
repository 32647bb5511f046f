//! Append-only JSONL store keyed by content hash.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Line<V> {
    key: String,
    #[serde(flatten)]
    value: V,
}

/// Concurrent readers, serialized appends. Every insert is flushed to disk
/// before it becomes visible to readers.
pub struct JsonlStore<V> {
    path: Option<PathBuf>,
    map: RwLock<HashMap<String, V>>,
    writer: Mutex<Option<BufWriter<File>>>,
}

impl<V> std::fmt::Debug for JsonlStore<V> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonlStore").field("path", &self.path).finish()
    }
}

impl<V: Clone + Serialize + DeserializeOwned> JsonlStore<V> {
    pub fn in_memory() -> Self {
        JsonlStore {
            path: None,
            map: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Opens (or creates) `path`, loading existing lines. A torn final line
    /// from an interrupted write is ignored; corruption elsewhere is an error.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut map = HashMap::new();
        let mut valid_len: Option<u64> = None;
        let mut needs_newline = false;
        if path.exists() {
            let content = std::fs::read_to_string(path)?;
            let lines: Vec<&str> = content.split_inclusive('\n').collect();
            let last = lines.len();
            let mut offset = 0u64;
            for (i, line) in lines.iter().enumerate() {
                let start = offset;
                offset += line.len() as u64;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Line<V>>(line) {
                    Ok(l) => {
                        map.insert(l.key, l.value);
                    }
                    Err(_) if i + 1 == last && !line.ends_with('\n') => valid_len = Some(start),
                    Err(e) => {
                        return Err(Error::Parse {
                            path: path.to_path_buf(),
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
            needs_newline = valid_len.is_none() && !content.is_empty() && !content.ends_with('\n');
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if let Some(len) = valid_len {
            // Drop the torn record left by an interrupted write.
            file.set_len(len)?;
        }
        if needs_newline {
            file.write_all(b"\n")?;
        }
        Ok(JsonlStore {
            path: Some(path.to_path_buf()),
            map: RwLock::new(map),
            writer: Mutex::new(Some(BufWriter::new(file))),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<V> {
        self.map.read().expect("cache lock").get(key).cloned()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.read().expect("cache lock").contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert_many(&self, entries: Vec<(String, V)>) -> Result<()> {
        if entries.is_empty() {
            return Ok(());
        }
        let mut guard = self.writer.lock().expect("cache writer lock");
        if let Some(w) = guard.as_mut() {
            for (key, value) in &entries {
                let line = serde_json::to_string(&Line {
                    key: key.clone(),
                    value: value.clone(),
                })?;
                w.write_all(line.as_bytes())?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        let mut map = self.map.write().expect("cache lock");
        for (key, value) in entries {
            map.insert(key, value);
        }
        Ok(())
    }
}
