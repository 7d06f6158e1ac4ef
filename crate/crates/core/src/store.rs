//! Artifact persistence.
//!
//! Artifacts are immutable and content addressed; mutable records (runs,
//! review items, datasets) live in named collections. Every write goes to a
//! temporary file that is renamed into place, and artifact puts and review
//! verdicts are appended to `log.jsonl` so the index can be rebuilt after an
//! abrupt stop.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::warn;

use crate::ir::{parse_artifact, ArtifactKind, ArtifactSource, PipelineArtifact};
use crate::util::sha256_hex;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("`{0}` not found")]
    NotFound(String),
    #[error("stored artifact `{id}` is corrupt: {detail}")]
    Corruption { id: String, detail: String },
    #[error("artifact id `{given}` does not match its content address `{expected}`")]
    IdMismatch { given: String, expected: String },
    #[error("invalid record key `{0}`")]
    BadKey(String),
    #[error("store i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("store record is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub kind: ArtifactKind,
    pub path: String,
    pub digest: String,
}

pub trait Store: Send + Sync {
    /// Store a sealed artifact; idempotent for identical content.
    fn put_artifact(&self, artifact: &PipelineArtifact) -> Result<String, StoreError>;
    /// Canonical text of a stored artifact, verified against its digest.
    fn get_artifact_text(&self, id: &str) -> Result<String, StoreError>;
    fn artifact_ids(&self) -> Vec<String>;
    fn put_record(&self, collection: &str, id: &str, value: &Value) -> Result<(), StoreError>;
    fn get_record(&self, collection: &str, id: &str) -> Result<Option<Value>, StoreError>;
    fn list_records(&self, collection: &str) -> Result<Vec<String>, StoreError>;
    fn append_event(&self, event: &Value) -> Result<(), StoreError>;
    fn events(&self) -> Result<Vec<Value>, StoreError>;

    fn get_artifact(&self, id: &str) -> Result<PipelineArtifact, StoreError> {
        let text = self.get_artifact_text(id)?;
        parse_artifact(&text).map_err(|e| StoreError::Corruption {
            id: id.to_string(),
            detail: e.to_string(),
        })
    }
}

/// Adapter so any store can resolve references during validation.
pub struct StoreSource<'a>(pub &'a dyn Store);

impl ArtifactSource for StoreSource<'_> {
    fn get_artifact(&self, id: &str) -> Option<PipelineArtifact> {
        self.0.get_artifact(id).ok()
    }
}

fn check_key(key: &str) -> Result<(), StoreError> {
    let ok = !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !key.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(StoreError::BadKey(key.to_string()))
    }
}

fn sealed_text(artifact: &PipelineArtifact) -> Result<(String, String), StoreError> {
    let expected = artifact.compute_id();
    if artifact.id() != expected {
        return Err(StoreError::IdMismatch {
            given: artifact.id().to_string(),
            expected,
        });
    }
    Ok((expected, artifact.canonical_text()))
}

/// File-backed store rooted at a directory.
pub struct FileStore {
    root: PathBuf,
    index: RwLock<HashMap<String, IndexEntry>>,
    log: Mutex<()>,
}

impl FileStore {
    /// Open (creating if needed) and rebuild the index from the write log.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("objects"))?;
        fs::create_dir_all(root.join("records"))?;
        let store = FileStore {
            root,
            index: RwLock::new(HashMap::new()),
            log: Mutex::new(()),
        };
        store.reindex()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn log_path(&self) -> PathBuf {
        self.root.join("log.jsonl")
    }

    fn reindex(&self) -> Result<(), StoreError> {
        let mut index = HashMap::new();
        for event in self.events()? {
            if event.get("op").and_then(Value::as_str) != Some("put") {
                continue;
            }
            let Some(id) = event.get("id").and_then(Value::as_str) else { continue };
            let Ok(entry) = serde_json::from_value::<IndexEntry>(event.clone()) else { continue };
            if self.root.join(&entry.path).exists() {
                index.insert(id.to_string(), entry);
            }
        }
        // Objects renamed into place whose log line was never written.
        let mut recovered = Vec::new();
        for dirent in fs::read_dir(self.root.join("objects"))? {
            let path = dirent?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            if name.ends_with(".tmp") {
                let _ = fs::remove_file(&path);
                continue;
            }
            let Some(id) = name.strip_suffix(".json") else { continue };
            if index.contains_key(id) {
                continue;
            }
            let text = fs::read_to_string(&path)?;
            match parse_artifact(&text) {
                Ok(a) if a.compute_id() == id && a.canonical_text() == text => {
                    recovered.push(a);
                }
                _ => warn!(%id, "ignoring unindexed object that fails verification"),
            }
        }
        *self.index.write().expect("index lock") = index;
        for a in recovered {
            self.log_put(&a, &a.canonical_text())?;
        }
        for dirent in walk_tmp(&self.root.join("records"))? {
            let _ = fs::remove_file(dirent);
        }
        Ok(())
    }

    fn log_put(&self, artifact: &PipelineArtifact, text: &str) -> Result<(), StoreError> {
        let entry = IndexEntry {
            kind: artifact.kind(),
            path: format!("objects/{}.json", artifact.id()),
            digest: sha256_hex(text.as_bytes()),
        };
        let mut event = serde_json::to_value(&entry)?;
        event["op"] = Value::from("put");
        event["id"] = Value::from(artifact.id());
        self.append_event(&event)?;
        self.index
            .write()
            .expect("index lock")
            .insert(artifact.id().to_string(), entry);
        Ok(())
    }

    pub fn index_entry(&self, id: &str) -> Option<IndexEntry> {
        self.index.read().expect("index lock").get(id).cloned()
    }
}

fn walk_tmp(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            out.extend(walk_tmp(&p)?);
        } else if p.extension().is_some_and(|x| x == "tmp") {
            out.push(p);
        }
    }
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(format!("{}.tmp", uuid::Uuid::new_v4().simple()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

impl Store for FileStore {
    fn put_artifact(&self, artifact: &PipelineArtifact) -> Result<String, StoreError> {
        let (id, text) = sealed_text(artifact)?;
        let _guard = self.log.lock().expect("log lock");
        if self.index.read().expect("index lock").contains_key(&id) {
            return Ok(id);
        }
        write_atomic(&self.root.join("objects").join(format!("{id}.json")), text.as_bytes())?;
        self.log_put(artifact, &text)?;
        Ok(id)
    }

    fn get_artifact_text(&self, id: &str) -> Result<String, StoreError> {
        let entry = self
            .index_entry(id)
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        let text = fs::read_to_string(self.root.join(&entry.path)).map_err(|e| StoreError::Corruption {
            id: id.to_string(),
            detail: e.to_string(),
        })?;
        if sha256_hex(text.as_bytes()) != entry.digest {
            return Err(StoreError::Corruption {
                id: id.to_string(),
                detail: "content digest does not match the index".into(),
            });
        }
        Ok(text)
    }

    fn artifact_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.index.read().expect("index lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn put_record(&self, collection: &str, id: &str, value: &Value) -> Result<(), StoreError> {
        check_key(collection)?;
        check_key(id)?;
        let dir = self.root.join("records").join(collection);
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(format!("{id}.json")), serde_json::to_string_pretty(value)?.as_bytes())?;
        Ok(())
    }

    fn get_record(&self, collection: &str, id: &str) -> Result<Option<Value>, StoreError> {
        check_key(collection)?;
        check_key(id)?;
        let path = self.root.join("records").join(collection).join(format!("{id}.json"));
        match fs::read_to_string(path) {
            Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn list_records(&self, collection: &str) -> Result<Vec<String>, StoreError> {
        check_key(collection)?;
        let dir = self.root.join("records").join(collection);
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for e in fs::read_dir(dir)? {
            let name = e?.file_name().to_string_lossy().to_string();
            if let Some(id) = name.strip_suffix(".json") {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }

    fn append_event(&self, event: &Value) -> Result<(), StoreError> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.log_path())?;
        let mut line = serde_json::to_string(event)?;
        line.push('\n');
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    fn events(&self) -> Result<Vec<Value>, StoreError> {
        let f = match File::open(self.log_path()) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            // a torn final line from an interrupted append is skipped
            if let Ok(v) = serde_json::from_str(&line) {
                out.push(v);
            }
        }
        Ok(out)
    }
}

/// In-memory store for tests and ephemeral runs.
#[derive(Default)]
pub struct MemoryStore {
    artifacts: RwLock<BTreeMap<String, String>>,
    records: RwLock<BTreeMap<(String, String), Value>>,
    log: Mutex<Vec<Value>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Store for MemoryStore {
    fn put_artifact(&self, artifact: &PipelineArtifact) -> Result<String, StoreError> {
        let (id, text) = sealed_text(artifact)?;
        self.artifacts
            .write()
            .expect("lock")
            .entry(id.clone())
            .or_insert(text);
        Ok(id)
    }

    fn get_artifact_text(&self, id: &str) -> Result<String, StoreError> {
        self.artifacts
            .read()
            .expect("lock")
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(id.to_string()))
    }

    fn artifact_ids(&self) -> Vec<String> {
        self.artifacts.read().expect("lock").keys().cloned().collect()
    }

    fn put_record(&self, collection: &str, id: &str, value: &Value) -> Result<(), StoreError> {
        check_key(collection)?;
        check_key(id)?;
        self.records
            .write()
            .expect("lock")
            .insert((collection.into(), id.into()), value.clone());
        Ok(())
    }

    fn get_record(&self, collection: &str, id: &str) -> Result<Option<Value>, StoreError> {
        Ok(self
            .records
            .read()
            .expect("lock")
            .get(&(collection.to_string(), id.to_string()))
            .cloned())
    }

    fn list_records(&self, collection: &str) -> Result<Vec<String>, StoreError> {
        Ok(self
            .records
            .read()
            .expect("lock")
            .keys()
            .filter(|(c, _)| c == collection)
            .map(|(_, id)| id.clone())
            .collect())
    }

    fn append_event(&self, event: &Value) -> Result<(), StoreError> {
        self.log.lock().expect("lock").push(event.clone());
        Ok(())
    }

    fn events(&self) -> Result<Vec<Value>, StoreError> {
        Ok(self.log.lock().expect("lock").clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{DesignSpec, PipelineArtifact};

    fn artifact(body: &str) -> PipelineArtifact {
        PipelineArtifact::DesignSpec(DesignSpec {
            id: String::new(),
            title: "t".into(),
            body: body.into(),
            port_table: vec![],
            register_map: vec![],
            behavior_notes: vec![],
        })
        .seal()
    }

    #[test]
    fn put_is_idempotent_and_get_is_verified() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let a = artifact("x");
        let id1 = store.put_artifact(&a).unwrap();
        let id2 = store.put_artifact(&a).unwrap();
        assert_eq!(id1, id2);
        assert_eq!(fs::read_dir(dir.path().join("objects")).unwrap().count(), 1);
        assert_eq!(store.get_artifact_text(&id1).unwrap(), a.canonical_text());
        assert!(matches!(store.get_artifact_text("spec-nope"), Err(StoreError::NotFound(_))));

        let path = dir.path().join("objects").join(format!("{id1}.json"));
        fs::write(&path, a.canonical_text().replace("\"x\"", "\"y\"")).unwrap();
        assert!(matches!(store.get_artifact_text(&id1), Err(StoreError::Corruption { .. })));
    }

    #[test]
    fn reopen_recovers_index_and_ignores_torn_log_line() {
        let dir = tempfile::tempdir().unwrap();
        let a = artifact("x");
        {
            let store = FileStore::open(dir.path()).unwrap();
            store.put_artifact(&a).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(dir.path().join("log.jsonl")).unwrap();
        f.write_all(b"{\"op\":\"put\",\"id\":").unwrap();
        fs::write(dir.path().join("objects").join("half.json.tmp"), b"{").unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        assert_eq!(store.artifact_ids(), vec![a.id().to_string()]);
        assert!(!dir.path().join("objects").join("half.json.tmp").exists());
    }

    #[test]
    fn unlogged_object_is_recovered() {
        let dir = tempfile::tempdir().unwrap();
        let a = artifact("z");
        fs::create_dir_all(dir.path().join("objects")).unwrap();
        fs::write(
            dir.path().join("objects").join(format!("{}.json", a.id())),
            a.canonical_text(),
        )
        .unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        assert_eq!(store.get_artifact(a.id()).unwrap(), a);
    }

    #[test]
    fn rejects_unsealed_artifacts_and_bad_keys() {
        let store = MemoryStore::new();
        let mut a = artifact("x");
        if let PipelineArtifact::DesignSpec(s) = &mut a {
            s.id = "spec-wrong".into();
        }
        assert!(matches!(store.put_artifact(&a), Err(StoreError::IdMismatch { .. })));
        assert!(matches!(
            store.put_record("runs", "../etc", &Value::Null),
            Err(StoreError::BadKey(_))
        ));
    }
}
