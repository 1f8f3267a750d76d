//! Line-delimited JSON persistence, one entry per line.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{MemoryEntry, MemoryError, MemoryStore, ScoringConfig};

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("cannot access store {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error(transparent)]
    Invalid(#[from] MemoryError),
}

pub fn load_store(path: &Path, scoring: ScoringConfig) -> Result<MemoryStore, PersistError> {
    let text = fs::read_to_string(path).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: MemoryEntry = serde_json::from_str(line).map_err(|e| PersistError::Malformed {
            path: path.to_path_buf(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(MemoryStore::from_entries(entries, scoring)?)
}

pub fn save_store(store: &MemoryStore, path: &Path) -> Result<(), PersistError> {
    let mut out = String::new();
    for entry in store.entries() {
        out.push_str(&serde_json::to_string(entry).expect("entries serialize"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::governance::{AuditLog, WriteGate};
    use crate::memory::EntryStatus;

    #[test]
    fn writes_exact_keys_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut store = MemoryStore::default();
        let mut audit = AuditLog::in_memory();
        let entry = MemoryEntry::new("k", "k = 1", 0.7, "op", 3).with_tags(["t"]);
        store.write_entry(entry, &WriteGate::open(), &mut audit, 3).unwrap();
        save_store(&store, &path).unwrap();

        let line = fs::read_to_string(&path).unwrap();
        let value: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        let keys: Vec<&str> = value.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            [
                "confidence", "content", "created_at", "id", "last_accessed_at", "last_verified_at", "provenance",
                "scope_key", "status", "tags"
            ]
        );

        let loaded = load_store(&path, ScoringConfig::default()).unwrap();
        assert_eq!(loaded.entries(), store.entries());
        assert_eq!(loaded.get("mem-000001").unwrap().status, EntryStatus::Active);
    }

    #[test]
    fn rejects_unknown_status() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        fs::write(
            &path,
            r#"{"id":"a","scope_key":"k","content":"c","confidence":0.5,"created_at":0,"last_verified_at":0,"last_accessed_at":0,"provenance":"op","status":"archived","tags":[]}"#,
        )
        .unwrap();
        let err = load_store(&path, ScoringConfig::default()).unwrap_err();
        assert!(matches!(err, PersistError::Malformed { line: 1, .. }));
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_store(Path::new("/nonexistent/store.jsonl"), ScoringConfig::default()).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/store.jsonl"));
    }
}
