use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CaptionRecord;
use crate::artifact::Provenance;

const STORE_KIND: &str = "embryocap-caption-store";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("caption store I/O: {0}")]
    Io(#[from] io::Error),
    #[error("caption store `{path}` line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreHeader {
    kind: String,
    provenance: Provenance,
}

/// Captions keyed by `(frame_id, model_id)`, persisted as JSON lines.
///
/// The first line is a header; every insert appends one record line, and on
/// load a later line for the same key replaces the earlier one. A torn final
/// line left by an interrupted run is skipped.
#[derive(Debug)]
pub struct CaptionStore {
    path: Option<PathBuf>,
    file: Option<File>,
    provenance: Provenance,
    records: BTreeMap<(String, String), CaptionRecord>,
}

impl CaptionStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            file: None,
            provenance: Provenance::new("caption", None),
            records: BTreeMap::new(),
        }
    }

    /// Opens `path`, creating it with `provenance` as header if absent.
    pub fn open(path: &Path, provenance: Provenance) -> Result<Self, StoreError> {
        let mut store = Self {
            path: Some(path.to_path_buf()),
            file: None,
            provenance,
            records: BTreeMap::new(),
        };
        if path.exists() {
            store.load(path)?;
        } else {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            let header = StoreHeader {
                kind: STORE_KIND.into(),
                provenance: store.provenance.clone(),
            };
            let mut f = File::create(path)?;
            writeln!(f, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        }
        store.file = Some(OpenOptions::new().append(true).open(path)?);
        Ok(store)
    }

    /// Read-only view of an existing store.
    pub fn read(path: &Path) -> Result<Self, StoreError> {
        let mut store = Self::in_memory();
        store.path = Some(path.to_path_buf());
        store.load(path)?;
        Ok(store)
    }

    fn load(&mut self, path: &Path) -> Result<(), StoreError> {
        let text = fs::read_to_string(path)?;
        let corrupt = |line: usize, reason: String| StoreError::Corrupt {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate();
        let header: StoreHeader = match lines.next() {
            Some((_, l)) => serde_json::from_str(l).map_err(|e| corrupt(1, e.to_string()))?,
            None => return Err(corrupt(1, "empty file".into())),
        };
        if header.kind != STORE_KIND {
            return Err(corrupt(1, format!("not a caption store (`{}`)", header.kind)));
        }
        self.provenance = header.provenance;
        let torn_tail = !text.ends_with('\n');
        let last = text.lines().count();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<CaptionRecord>(line) {
                Ok(r) => {
                    self.records.insert((r.frame_id.clone(), r.model_id.clone()), r);
                }
                Err(e) if torn_tail && idx + 1 == last => {
                    tracing::warn!(line = idx + 1, error = %e, "skipping torn final caption record");
                }
                Err(e) => return Err(corrupt(idx + 1, e.to_string())),
            }
        }
        Ok(())
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, frame_id: &str, model_id: &str) -> Option<&CaptionRecord> {
        self.records.get(&(frame_id.to_string(), model_id.to_string()))
    }

    /// Cache hit only if the stored caption was produced with the same prompt.
    pub fn lookup(&self, frame_id: &str, model_id: &str, prompt_hash: &str) -> Option<&CaptionRecord> {
        self.get(frame_id, model_id).filter(|r| r.prompt_hash == prompt_hash)
    }

    pub fn records(&self) -> impl Iterator<Item = &CaptionRecord> {
        self.records.values()
    }

    /// Adds or supersedes the record for its `(frame, model)` pair.
    pub fn insert(&mut self, record: CaptionRecord) -> Result<(), StoreError> {
        if let Some(f) = self.file.as_mut() {
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.records
            .insert((record.frame_id.clone(), record.model_id.clone()), record);
        Ok(())
    }
}
