//! File-backed run store. Each run lives in `runs/<run_id>/`; files are
//! written to a temporary name and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::ExplanationRecord;
use crate::registry::ExplanationType;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("run {0} not found")]
    NotFound(String),
    #[error("run {id} is corrupt: {reason}")]
    Corrupt { id: String, reason: String },
    #[error("invalid run id {0:?}")]
    InvalidId(String),
    #[error("io error at {path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: std::io::Error) -> StoreError {
    StoreError::Io { path: path.display().to_string(), message: e.to_string() }
}

pub const RECORD_FILE: &str = "record.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunIndexEntry {
    pub run_id: String,
    pub question: String,
    pub explanation_type: ExplanationType,
    pub supported: bool,
    pub started_at: String,
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

static COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.{}.{}.tmp", std::process::id(), COUNTER.fetch_add(1, Ordering::Relaxed)));
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let runs = root.join("runs");
        fs::create_dir_all(&runs).map_err(|e| io_err(&runs, e))?;
        Ok(RunStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> Result<PathBuf, StoreError> {
        if !valid_id(run_id) {
            return Err(StoreError::InvalidId(run_id.to_string()));
        }
        Ok(self.root.join("runs").join(run_id))
    }

    /// Reserves a fresh run directory. Ids are a UTC timestamp plus a hash
    /// prefix; creation fails rather than reusing an existing directory.
    pub fn create_run(&self, question: &str, seed: u64) -> Result<(String, PathBuf), StoreError> {
        loop {
            let now = chrono::Utc::now();
            let mut h = Sha256::new();
            h.update(question.as_bytes());
            h.update(seed.to_le_bytes());
            h.update(now.timestamp_nanos_opt().unwrap_or_default().to_le_bytes());
            h.update(std::process::id().to_le_bytes());
            h.update(COUNTER.fetch_add(1, Ordering::Relaxed).to_le_bytes());
            let digest = h.finalize();
            let hex: String = digest.iter().take(4).map(|b| format!("{b:02x}")).collect();
            let id = format!("{}-{hex}", now.format("%Y%m%dT%H%M%S%3fZ"));
            let dir = self.run_dir(&id)?;
            match fs::create_dir(&dir) {
                Ok(()) => return Ok((id, dir)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(io_err(&dir, e)),
            }
        }
    }

    pub fn write(&self, run_id: &str, relative: &str, bytes: &[u8]) -> Result<PathBuf, StoreError> {
        let path = self.run_dir(run_id)?.join(relative);
        write_atomic(&path, bytes)?;
        Ok(path)
    }

    pub fn read(&self, run_id: &str, relative: &str) -> Result<String, StoreError> {
        let path = self.run_dir(run_id)?.join(relative);
        fs::read_to_string(&path).map_err(|e| io_err(&path, e))
    }

    pub fn persist(&self, record: &ExplanationRecord) -> Result<(), StoreError> {
        let json = serde_json::to_string_pretty(record).map_err(|e| StoreError::Corrupt {
            id: record.run_id.clone(),
            reason: e.to_string(),
        })?;
        self.write(&record.run_id, RECORD_FILE, json.as_bytes()).map(|_| ())
    }

    pub fn load(&self, run_id: &str) -> Result<ExplanationRecord, StoreError> {
        let path = self.run_dir(run_id)?.join(RECORD_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::NotFound(run_id.to_string())),
            Err(e) => return Err(io_err(&path, e)),
        };
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt { id: run_id.to_string(), reason: e.to_string() })
    }

    /// Completed runs, oldest first. Directories without a record are runs
    /// still in progress and are skipped.
    pub fn list(&self) -> Result<Vec<RunIndexEntry>, StoreError> {
        let runs = self.root.join("runs");
        let mut ids: Vec<String> = fs::read_dir(&runs)
            .map_err(|e| io_err(&runs, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(RECORD_FILE).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| valid_id(id))
            .collect();
        ids.sort();
        ids.iter()
            .map(|id| {
                self.load(id).map(|r| RunIndexEntry {
                    run_id: r.run_id,
                    question: r.uq,
                    explanation_type: r.explanation_type,
                    supported: r.supported,
                    started_at: r.started_at,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_unique_and_validated() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        let a = store.create_run("q", 1).unwrap().0;
        let b = store.create_run("q", 1).unwrap().0;
        assert_ne!(a, b);
        assert!(matches!(store.run_dir("../etc"), Err(StoreError::InvalidId(_))));
        assert!(matches!(store.load(&a), Err(StoreError::NotFound(_))));
        assert!(store.list().unwrap().is_empty());
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.json");
        write_atomic(&p, b"{}").unwrap();
        write_atomic(&p, b"[]").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "[]");
        assert_eq!(fs::read_dir(dir.path().join("sub")).unwrap().count(), 1);
    }

    #[test]
    fn corrupt_record_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        let (id, _) = store.create_run("q", 0).unwrap();
        store.write(&id, RECORD_FILE, b"{not json").unwrap();
        assert!(matches!(store.load(&id), Err(StoreError::Corrupt { .. })));
    }
}
