use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{DataError, DeadLetterReason, TelemetryBatch};

/// Index line written next to each retained batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DlqIndexEntry {
    pub batch_id: String,
    pub reason: DeadLetterReason,
    pub ts_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlqRecord {
    pub entry: DlqIndexEntry,
    /// The batch exactly as received, serialized as JSON.
    pub batch_bytes: Vec<u8>,
}

/// Append-only quarantine for rejected batches.
///
/// When backed by a directory, `batches.bin` holds u32 BE length-prefixed
/// batch records and `index.jsonl` one [`DlqIndexEntry`] per record.
#[derive(Debug, Default)]
pub struct DlqStore {
    dir: Option<PathBuf>,
    records: Mutex<Vec<DlqRecord>>,
}

impl DlqStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self, DataError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            records: Mutex::new(Vec::new()),
        })
    }

    pub fn append(&self, batch: &TelemetryBatch, reason: DeadLetterReason, ts_ms: u64) -> Result<(), DataError> {
        let batch_bytes = serde_json::to_vec(batch).map_err(std::io::Error::from)?;
        let entry = DlqIndexEntry {
            batch_id: batch.batch_id.clone(),
            reason,
            ts_ms,
        };
        let mut records = self.records.lock().expect("dlq poisoned");
        if let Some(dir) = &self.dir {
            let mut bin = append_file(&dir.join("batches.bin"))?;
            let mut framed = Vec::with_capacity(4 + batch_bytes.len());
            framed.extend_from_slice(&(batch_bytes.len() as u32).to_be_bytes());
            framed.extend_from_slice(&batch_bytes);
            bin.write_all(&framed)?;
            let mut line = serde_json::to_vec(&entry).map_err(std::io::Error::from)?;
            line.push(b'\n');
            append_file(&dir.join("index.jsonl"))?.write_all(&line)?;
        }
        records.push(DlqRecord { entry, batch_bytes });
        Ok(())
    }

    pub fn records(&self) -> Vec<DlqRecord> {
        self.records.lock().expect("dlq poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("dlq poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, batch_id: &str) -> bool {
        self.records.lock().expect("dlq poisoned").iter().any(|r| r.entry.batch_id == batch_id)
    }
}

fn append_file(path: &Path) -> std::io::Result<File> {
    OpenOptions::new().create(true).append(true).open(path)
}

/// Reads back a `batches.bin` file.
pub fn read_batches(path: impl AsRef<Path>) -> Result<Vec<TelemetryBatch>, DataError> {
    let bytes = fs::read(path)?;
    let mut rest = bytes.as_slice();
    let mut out = Vec::new();
    while !rest.is_empty() {
        let truncated = || DataError::Corrupt("truncated DLQ record".into());
        let len = u32::from_be_bytes(rest.get(..4).ok_or_else(truncated)?.try_into().expect("4 bytes")) as usize;
        let body = rest.get(4..4 + len).ok_or_else(truncated)?;
        out.push(serde_json::from_slice(body).map_err(|e| DataError::Corrupt(e.to_string()))?);
        rest = &rest[4 + len..];
    }
    Ok(out)
}
