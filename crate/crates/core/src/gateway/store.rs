use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::GenerationRecord;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("record store {path}: line {line} is corrupt: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("record for prompt {prompt_id} replicate {replicate_index} already stored")]
    Duplicate { prompt_id: String, replicate_index: u32 },
    #[error("record store {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
}

/// Append-only JSONL file of generation records.
#[derive(Debug)]
pub struct RecordStore {
    path: PathBuf,
    file: File,
    keys: HashSet<(String, String, u32)>,
    len: usize,
}

impl RecordStore {
    /// Opens (creating if needed) a store and indexes what it already holds.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let existing = if path.exists() {
            Self::read_all(&path)?
        } else {
            Vec::new()
        };
        let mut keys = HashSet::with_capacity(existing.len());
        for record in &existing {
            keys.insert(owned_key(record));
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| StoreError::Io(path.clone(), e))?;
        Ok(RecordStore {
            path,
            file,
            keys,
            len: existing.len(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, prompt_id: &str, model_id: &str, replicate_index: u32) -> bool {
        self.keys
            .contains(&(prompt_id.to_string(), model_id.to_string(), replicate_index))
    }

    /// Writes one record and flushes it. Existing keys are rejected.
    pub fn append(&mut self, record: &GenerationRecord) -> Result<(), StoreError> {
        let key = owned_key(record);
        if self.keys.contains(&key) {
            return Err(StoreError::Duplicate {
                prompt_id: record.prompt_id.clone(),
                replicate_index: record.replicate_index,
            });
        }
        let mut line = serde_json::to_vec(record).map_err(|e| StoreError::Io(self.path.clone(), e.into()))?;
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.flush())
            .map_err(|e| StoreError::Io(self.path.clone(), e))?;
        self.keys.insert(key);
        self.len += 1;
        Ok(())
    }

    /// Reads every record; any unparseable line makes the store corrupt.
    pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<GenerationRecord>, StoreError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| StoreError::Io(path.to_path_buf(), e))?;
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| StoreError::Io(path.to_path_buf(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: GenerationRecord = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: e.to_string(),
            })?;
            if !seen.insert(owned_key(&record)) {
                return Err(StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    reason: format!(
                        "duplicate record for prompt {} replicate {}",
                        record.prompt_id, record.replicate_index
                    ),
                });
            }
            records.push(record);
        }
        Ok(records)
    }
}

fn owned_key(record: &GenerationRecord) -> (String, String, u32) {
    (
        record.prompt_id.clone(),
        record.model_id.clone(),
        record.replicate_index,
    )
}
