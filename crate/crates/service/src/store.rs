//! On-disk session persistence: a creation record, an append-only JSON-lines
//! measurement log and a periodic label snapshot per session directory.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use redzone_core::engine::SessionStatus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::CreateSessionRequest;

pub const META_FILE: &str = "session.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub schema_version: u32,
    pub id: String,
    pub created_ms: u64,
    pub request: CreateSessionRequest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// Zero-based position in the log.
    pub seq: usize,
    pub index: usize,
    pub value: f64,
    pub deviation: bool,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub schema_version: u32,
    pub step: usize,
    pub status: SessionStatus,
    /// Row-major `U`/`L`/`C` string.
    pub labels: String,
}

/// A session as found on disk.
#[derive(Debug, Clone)]
pub struct StoredSession {
    pub meta: SessionMeta,
    pub log: Vec<LogEntry>,
    pub snapshot: Option<Snapshot>,
}

/// Session directory layout under a data root; `None` keeps nothing on disk.
#[derive(Debug, Clone)]
pub struct Store {
    root: Option<PathBuf>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(io(&tmp))?;
        f.write_all(bytes).map_err(io(&tmp))?;
        f.sync_all().map_err(io(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io(path))
}

impl Store {
    pub fn memory() -> Self {
        Self { root: None }
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io(&root))?;
        Ok(Self { root: Some(root) })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn dir(&self, id: &str) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join(id))
    }

    pub fn create(&self, meta: &SessionMeta) -> Result<(), StoreError> {
        let Some(dir) = self.dir(&meta.id) else {
            return Ok(());
        };
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let bytes = serde_json::to_vec_pretty(meta).expect("meta serializes");
        write_atomic(&dir.join(META_FILE), &bytes)?;
        let log = dir.join(LOG_FILE);
        File::create(&log).map_err(io(&log))?;
        Ok(())
    }

    pub fn append(&self, id: &str, entry: &LogEntry) -> Result<(), StoreError> {
        let Some(dir) = self.dir(id) else {
            return Ok(());
        };
        let path = dir.join(LOG_FILE);
        let mut f = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(io(&path))?;
        let mut line = serde_json::to_vec(entry).expect("log entry serializes");
        line.push(b'\n');
        f.write_all(&line).map_err(io(&path))?;
        f.sync_data().map_err(io(&path))
    }

    pub fn write_snapshot(&self, id: &str, snapshot: &Snapshot) -> Result<(), StoreError> {
        let Some(dir) = self.dir(id) else {
            return Ok(());
        };
        let bytes = serde_json::to_vec(snapshot).expect("snapshot serializes");
        write_atomic(&dir.join(SNAPSHOT_FILE), &bytes)
    }

    /// Every session directory under the root, sorted by id.
    pub fn load_all(&self) -> Result<Vec<StoredSession>, StoreError> {
        let Some(root) = &self.root else {
            return Ok(Vec::new());
        };
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)
            .map_err(io(root))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(META_FILE).is_file())
            .collect();
        dirs.sort();
        dirs.iter().map(|d| load_dir(d)).collect()
    }
}

fn load_dir(dir: &Path) -> Result<StoredSession, StoreError> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(io(&meta_path))?;
    let meta: SessionMeta = serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
        path: meta_path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;

    let log_path = dir.join(LOG_FILE);
    let mut log = Vec::new();
    if log_path.is_file() {
        let f = File::open(&log_path).map_err(io(&log_path))?;
        let lines: Vec<String> = BufReader::new(f)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(io(&log_path))?;
        let last = lines.len();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LogEntry>(line) {
                Ok(e) if e.seq == log.len() => log.push(e),
                Ok(e) => {
                    return Err(StoreError::Corrupt {
                        path: log_path.clone(),
                        line: i + 1,
                        msg: format!("sequence {} where {} was expected", e.seq, log.len()),
                    })
                }
                // a torn final line is a write that was never acknowledged
                Err(_) if i + 1 == last => {
                    let mut bytes = Vec::new();
                    for e in &log {
                        bytes.extend(serde_json::to_vec(e).expect("log entry serializes"));
                        bytes.push(b'\n');
                    }
                    write_atomic(&log_path, &bytes)?;
                    break;
                }
                Err(e) => {
                    return Err(StoreError::Corrupt {
                        path: log_path.clone(),
                        line: i + 1,
                        msg: e.to_string(),
                    })
                }
            }
        }
    }

    let snap_path = dir.join(SNAPSHOT_FILE);
    let snapshot = if snap_path.is_file() {
        let text = fs::read_to_string(&snap_path).map_err(io(&snap_path))?;
        Some(serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            path: snap_path.clone(),
            line: e.line(),
            msg: e.to_string(),
        })?)
    } else {
        None
    };
    Ok(StoredSession {
        meta,
        log,
        snapshot,
    })
}
