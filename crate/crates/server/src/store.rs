//! Append-only JSON-lines case store. Every change appends the full updated
//! record; replaying the file keeps the last line per id.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::Utc;
use plasmo_core::api::{CaseRecord, Review, ReviewRequest};
use plasmo_core::localizer::Detection;
use plasmo_core::Prediction;
use thiserror::Error;
use tokio::sync::Mutex;
use ulid::Generator;

pub const STORE_FILE: &str = "cases.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no case with id {0}")]
    NotFound(String),
    #[error("case {0} has already been reviewed")]
    AlreadyReviewed(String),
    #[error("case store io: {0}")]
    Io(#[from] std::io::Error),
    #[error("case store encoding: {0}")]
    Encode(#[from] serde_json::Error),
}

struct Inner {
    file: File,
    records: BTreeMap<String, CaseRecord>,
    ids: Generator,
}

impl Inner {
    fn append(&mut self, record: CaseRecord) -> Result<CaseRecord, StoreError> {
        let mut line = serde_json::to_vec(&record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.records.insert(record.id.clone(), record.clone());
        Ok(record)
    }
}

/// Single-writer case store: all appends go through one async mutex.
pub struct CaseStore {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl CaseStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        fs::create_dir_all(dir.as_ref())?;
        let path = dir.as_ref().join(STORE_FILE);
        let mut records = BTreeMap::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CaseRecord>(&line) {
                    Ok(r) => {
                        records.insert(r.id.clone(), r);
                    }
                    Err(e) => tracing::warn!(line = n + 1, error = %e, "skipping malformed case line"),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            inner: Mutex::new(Inner {
                file,
                records,
                ids: Generator::new(),
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub async fn create(
        &self,
        image_hash: String,
        prediction: Prediction,
        detections: Option<Vec<Detection>>,
    ) -> Result<CaseRecord, StoreError> {
        let mut inner = self.inner.lock().await;
        let id = inner
            .ids
            .generate()
            .map_err(|e| std::io::Error::other(e.to_string()))?
            .to_string();
        let record = CaseRecord {
            id,
            created_at: Utc::now(),
            image_hash,
            prediction,
            count: detections.as_ref().map(Vec::len),
            detections,
            review: None,
        };
        inner.append(record)
    }

    pub async fn attach_detections(&self, id: &str, detections: Vec<Detection>) -> Result<CaseRecord, StoreError> {
        let mut inner = self.inner.lock().await;
        let mut record = inner.records.get(id).cloned().ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        record.count = Some(detections.len());
        record.detections = Some(detections);
        inner.append(record)
    }

    pub async fn review(&self, id: &str, request: ReviewRequest) -> Result<CaseRecord, StoreError> {
        let mut inner = self.inner.lock().await;
        let mut record = inner.records.get(id).cloned().ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        if record.review.is_some() {
            return Err(StoreError::AlreadyReviewed(id.to_string()));
        }
        record.review = Some(Review {
            verdict: request.verdict,
            note: request.note,
            reviewed_at: Utc::now(),
        });
        inner.append(record)
    }

    pub async fn get(&self, id: &str) -> Option<CaseRecord> {
        self.inner.lock().await.records.get(id).cloned()
    }

    /// Newest first.
    pub async fn list(&self, limit: usize) -> Vec<CaseRecord> {
        self.inner.lock().await.records.values().rev().take(limit).cloned().collect()
    }

    pub async fn len(&self) -> usize {
        self.inner.lock().await.records.len()
    }

    pub async fn is_empty(&self) -> bool {
        self.len().await == 0
    }
}
