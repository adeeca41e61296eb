//! Append-only JSON-lines persistence.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ingest::model::LogEntry;

pub const LOG_FILE: &str = "records.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage io: {0}")]
    Io(#[from] std::io::Error),
    #[error("log line {line} is corrupt: {message}")]
    Corrupt { line: usize, message: String },
    #[error("storage: {0}")]
    Other(String),
}

pub trait Store: Send {
    /// Returns once the entry is durable.
    fn append(&mut self, entry: &LogEntry) -> Result<(), StoreError>;
    /// Every entry in append order.
    fn load(&mut self) -> Result<Vec<LogEntry>, StoreError>;
}

/// Keeps entries in memory only.
#[derive(Debug, Default)]
pub struct MemoryStore {
    entries: Vec<LogEntry>,
}

impl MemoryStore {
    pub fn new() -> Self {
        MemoryStore::default()
    }
}

impl Store for MemoryStore {
    fn append(&mut self, entry: &LogEntry) -> Result<(), StoreError> {
        self.entries.push(entry.clone());
        Ok(())
    }

    fn load(&mut self) -> Result<Vec<LogEntry>, StoreError> {
        Ok(self.entries.clone())
    }
}

/// One JSON object per line, fsynced after every append.
#[derive(Debug)]
pub struct JsonlStore {
    path: PathBuf,
    file: File,
}

impl JsonlStore {
    /// Opens (creating if needed) `records.jsonl` under `dir`.
    pub fn open_dir(dir: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(dir)?;
        Self::open(&dir.join(LOG_FILE))
    }

    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(JsonlStore {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Store for JsonlStore {
    fn append(&mut self, entry: &LogEntry) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(entry).map_err(|e| StoreError::Other(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }

    /// A final line without its newline is a write torn by a crash; it is
    /// dropped and truncated away so later appends start on a clean line.
    /// Any other unreadable line is reported as corruption.
    fn load(&mut self) -> Result<Vec<LogEntry>, StoreError> {
        let bytes = fs::read(&self.path)?;
        let mut entries = Vec::new();
        let mut offset = 0usize;
        let mut line_no = 0usize;
        while offset < bytes.len() {
            line_no += 1;
            let end = bytes[offset..].iter().position(|&b| b == b'\n');
            let Some(len) = end else {
                tracing::warn!(line = line_no, "dropping torn final log line");
                self.file.set_len(offset as u64)?;
                self.file.sync_data()?;
                break;
            };
            let line = &bytes[offset..offset + len];
            offset += len + 1;
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let entry = serde_json::from_slice(line).map_err(|e| StoreError::Corrupt {
                line: line_no,
                message: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(entries)
    }
}
