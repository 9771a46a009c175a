//! Content-addressable artifact store with lineage.
//!
//! Artifacts are named by the SHA-256 of their bytes and never change once
//! written. Besides the objects themselves the store keeps two indexes:
//! the identity binding (`TaskIdentity` to published output, first writer
//! wins) and the per-edge lineage log used for audit and replay.
//!
//! On disk the layout is
//!
//! ```text
//! <root>/objects/ab/cd/abcd…   one file per artifact, sharded by digest prefix
//! <root>/index.log             write-ahead log of puts and identity bindings
//! <root>/lineage.log           one JSON record per lineage edge or discard note
//! ```

mod lineage;

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::digest::{ContentHash, TaskIdentity};

pub use lineage::{DiscardNote, LineageEdge, LineageRecord, EXECUTED_BY_CACHE};

#[derive(Debug, thiserror::Error)]
pub enum CasError {
    #[error("storage full: {needed} bytes needed, {available} available")]
    StorageFull { needed: u64, available: u64 },
    #[error("artifact {0} not found")]
    NotFound(ContentHash),
    #[error("artifact {0} failed integrity check")]
    IntegrityError(ContentHash),
    #[error("cannot publish {0}: artifact not in store")]
    MissingArtifact(ContentHash),
    #[error("no lineage recorded for workflow `{0}`")]
    UnknownWorkflow(String),
    #[error("cas io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt cas log: {0}")]
    Log(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    ModelWeights,
    Adapter,
    Tokenizer,
    DatasetShard,
    Rollout,
    Score,
    EvalTrace,
    #[default]
    Generic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub hash: ContentHash,
    pub bytes: Vec<u8>,
    pub size: u64,
    pub kind: ArtifactKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PublishOutcome {
    Won,
    DuplicateDiscarded,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum IndexRecord {
    Put { hash: ContentHash, kind: ArtifactKind, size: u64 },
    Bind { identity: TaskIdentity, output: ContentHash },
}

struct Stored {
    kind: ArtifactKind,
    size: u64,
    /// Held in memory for in-memory stores; read from disk otherwise.
    bytes: Option<Vec<u8>>,
}

struct Logs {
    index: File,
    lineage: File,
}

#[derive(Default)]
struct Inner {
    artifacts: HashMap<ContentHash, Stored>,
    used: u64,
    outputs: HashMap<TaskIdentity, ContentHash>,
    lineage: Vec<LineageEdge>,
    discards: Vec<DiscardNote>,
    logs: Option<Logs>,
}

/// Thread-safe artifact store. Every operation takes one internal lock, so
/// all operations are linearizable and `publish` is a compare-and-set.
pub struct CasStore {
    root: Option<PathBuf>,
    capacity: Option<u64>,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for CasStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CasStore")
            .field("root", &self.root)
            .field("capacity", &self.capacity)
            .finish_non_exhaustive()
    }
}

fn append_json<T: Serialize>(file: &mut File, record: &T) -> Result<(), CasError> {
    let mut line = serde_json::to_vec(record).map_err(|e| CasError::Log(e.to_string()))?;
    line.push(b'\n');
    file.write_all(&line)?;
    Ok(())
}

impl CasStore {
    pub fn in_memory() -> Self {
        Self { root: None, capacity: None, inner: Mutex::new(Inner::default()) }
    }

    pub fn with_capacity(mut self, bytes: u64) -> Self {
        self.capacity = Some(bytes);
        self
    }

    /// Open (or create) a store rooted at `root`, recovering any previous state.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, CasError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("objects"))?;
        let mut inner = Inner::default();

        let mut kinds: HashMap<ContentHash, ArtifactKind> = HashMap::new();
        let index_path = root.join("index.log");
        if index_path.exists() {
            for line in BufReader::new(File::open(&index_path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<IndexRecord>(&line) {
                    Ok(IndexRecord::Put { hash, kind, .. }) => {
                        kinds.insert(hash, kind);
                    }
                    Ok(IndexRecord::Bind { identity, output }) => {
                        inner.outputs.entry(identity).or_insert(output);
                    }
                    // A torn final line from an interrupted append.
                    Err(_) => break,
                }
            }
        }
        for shard in fs::read_dir(root.join("objects"))? {
            let shard = shard?.path();
            if !shard.is_dir() {
                continue;
            }
            for sub in fs::read_dir(&shard)? {
                let sub = sub?.path();
                if !sub.is_dir() {
                    continue;
                }
                for obj in fs::read_dir(&sub)? {
                    let obj = obj?.path();
                    let Some(hash) = obj
                        .file_name()
                        .and_then(|n| n.to_str())
                        .and_then(|n| n.parse::<ContentHash>().ok())
                    else {
                        continue;
                    };
                    let size = fs::metadata(&obj)?.len();
                    let kind = kinds.get(&hash).copied().unwrap_or_default();
                    inner.used += size;
                    inner.artifacts.insert(hash, Stored { kind, size, bytes: None });
                }
            }
        }
        let lineage_path = root.join("lineage.log");
        if lineage_path.exists() {
            for line in BufReader::new(File::open(&lineage_path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<LineageRecord>(&line) {
                    Ok(LineageRecord::Edge(e)) => inner.lineage.push(e),
                    Ok(LineageRecord::Discard(d)) => inner.discards.push(d),
                    Err(_) => break,
                }
            }
        }
        let open_append = |p: PathBuf| OpenOptions::new().create(true).append(true).open(p);
        inner.logs = Some(Logs {
            index: open_append(index_path)?,
            lineage: open_append(lineage_path)?,
        });
        Ok(Self { root: Some(root), capacity: None, inner: Mutex::new(inner) })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Path of the backing file for `hash` (disk-backed stores only).
    pub fn object_path(&self, hash: &ContentHash) -> Option<PathBuf> {
        let hex = hash.to_hex();
        self.root
            .as_ref()
            .map(|r| r.join("objects").join(&hex[0..2]).join(&hex[2..4]).join(hex))
    }

    pub fn put(&self, bytes: &[u8]) -> Result<ContentHash, CasError> {
        self.put_artifact(bytes, ArtifactKind::Generic)
    }

    /// Store `bytes`; re-putting equal content is a no-op returning the same hash.
    pub fn put_artifact(&self, bytes: &[u8], kind: ArtifactKind) -> Result<ContentHash, CasError> {
        let hash = ContentHash::of(bytes);
        let mut inner = self.lock();
        if inner.artifacts.contains_key(&hash) {
            return Ok(hash);
        }
        let size = bytes.len() as u64;
        if let Some(cap) = self.capacity {
            let available = cap.saturating_sub(inner.used);
            if size > available {
                return Err(CasError::StorageFull { needed: size, available });
            }
        }
        let held = match self.object_path(&hash) {
            Some(path) => {
                let dir = path.parent().expect("sharded path has parent");
                fs::create_dir_all(dir)?;
                let tmp = path.with_extension("tmp");
                fs::write(&tmp, bytes)?;
                fs::rename(&tmp, &path)?;
                let logs = inner.logs.as_mut().expect("disk store has logs");
                append_json(&mut logs.index, &IndexRecord::Put { hash, kind, size })?;
                None
            }
            None => Some(bytes.to_vec()),
        };
        inner.used += size;
        inner.artifacts.insert(hash, Stored { kind, size, bytes: held });
        Ok(hash)
    }

    /// Fetch and re-verify an artifact.
    pub fn get(&self, hash: &ContentHash) -> Result<Artifact, CasError> {
        let (kind, size, bytes) = {
            let inner = self.lock();
            let stored = inner.artifacts.get(hash).ok_or(CasError::NotFound(*hash))?;
            (stored.kind, stored.size, stored.bytes.clone())
        };
        let bytes = match bytes {
            Some(b) => b,
            None => {
                let path = self.object_path(hash).expect("disk store");
                match fs::read(&path) {
                    Ok(b) => b,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                        return Err(CasError::IntegrityError(*hash))
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        };
        if ContentHash::of(&bytes) != *hash {
            return Err(CasError::IntegrityError(*hash));
        }
        Ok(Artifact { hash: *hash, size, bytes, kind })
    }

    pub fn has(&self, hash: &ContentHash) -> bool {
        self.get(hash).is_ok()
    }

    /// Size of a stored artifact without reading it.
    pub fn size_of(&self, hash: &ContentHash) -> Option<u64> {
        self.lock().artifacts.get(hash).map(|s| s.size)
    }

    pub fn stored_bytes(&self) -> u64 {
        self.lock().used
    }

    pub fn artifact_count(&self) -> usize {
        self.lock().artifacts.len()
    }

    pub fn lookup_output(&self, identity: &TaskIdentity) -> Option<ContentHash> {
        self.lock().outputs.get(identity).copied()
    }

    /// Bind `identity` to `output` if nothing is bound yet (first writer wins).
    ///
    /// The winner's lineage edge is appended; a loser only leaves a discard note.
    pub fn publish(
        &self,
        identity: TaskIdentity,
        output: ContentHash,
        edge: LineageEdge,
    ) -> Result<PublishOutcome, CasError> {
        let mut inner = self.lock();
        if !inner.artifacts.contains_key(&output) {
            return Err(CasError::MissingArtifact(output));
        }
        if inner.outputs.contains_key(&identity) {
            let note = DiscardNote {
                task_identity: identity,
                output,
                executed_by: edge.executed_by,
                at: edge.completed_at,
            };
            if let Some(logs) = inner.logs.as_mut() {
                append_json(&mut logs.lineage, &LineageRecord::Discard(note.clone()))?;
            }
            inner.discards.push(note);
            return Ok(PublishOutcome::DuplicateDiscarded);
        }
        if let Some(logs) = inner.logs.as_mut() {
            append_json(&mut logs.index, &IndexRecord::Bind { identity, output })?;
            append_json(&mut logs.lineage, &LineageRecord::Edge(edge.clone()))?;
        }
        inner.outputs.insert(identity, output);
        inner.lineage.push(edge);
        Ok(PublishOutcome::Won)
    }

    /// Append a lineage edge for a consumer served by an already-bound output.
    pub fn record_edge(&self, edge: LineageEdge) -> Result<(), CasError> {
        let mut inner = self.lock();
        if !inner.artifacts.contains_key(&edge.produced) {
            return Err(CasError::MissingArtifact(edge.produced));
        }
        if let Some(logs) = inner.logs.as_mut() {
            append_json(&mut logs.lineage, &LineageRecord::Edge(edge.clone()))?;
        }
        inner.lineage.push(edge);
        Ok(())
    }

    /// Lineage edges of one workflow in completion order.
    pub fn replay(&self, workflow_id: &str) -> Result<Vec<LineageEdge>, CasError> {
        let edges: Vec<LineageEdge> = self
            .lock()
            .lineage
            .iter()
            .filter(|e| e.workflow_id == workflow_id)
            .cloned()
            .collect();
        if edges.is_empty() {
            return Err(CasError::UnknownWorkflow(workflow_id.to_string()));
        }
        Ok(edges)
    }

    pub fn lineage_len(&self) -> usize {
        self.lock().lineage.len()
    }

    pub fn discards(&self) -> Vec<DiscardNote> {
        self.lock().discards.clone()
    }

    pub fn bound_identities(&self) -> usize {
        self.lock().outputs.len()
    }
}
