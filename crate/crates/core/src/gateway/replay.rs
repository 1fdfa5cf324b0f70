//! Record/replay cache of LLM responses.
//!
//! Cache files hold one record per line:
//!
//! ```text
//! <sha256 hex of round + prompt>\t<backend id>\t<response as a JSON string>
//! ```
//!
//! The digest covers the self-consistency round as well as the prompt, so the
//! `m` identical prompts of an initial-order plan replay `m` distinct
//! recorded responses.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use async_trait::async_trait;
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, CompletionRequest};

pub fn prompt_digest(round: u32, prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("round={round}\n").as_bytes());
    hasher.update(prompt.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayRecord {
    pub digest: String,
    pub backend: String,
    pub response: String,
}

impl ReplayRecord {
    pub fn to_line(&self) -> String {
        let escaped = serde_json::to_string(&self.response).expect("strings always serialize");
        format!("{}\t{}\t{}", self.digest, self.backend, escaped)
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let mut parts = line.splitn(3, '\t');
        let (Some(digest), Some(backend), Some(body)) = (parts.next(), parts.next(), parts.next()) else {
            return Err("expected three tab-separated fields".into());
        };
        if digest.len() != 64 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(format!("bad digest {digest:?}"));
        }
        let response: String = serde_json::from_str(body).map_err(|e| format!("bad response field: {e}"))?;
        Ok(Self {
            digest: digest.to_ascii_lowercase(),
            backend: backend.to_string(),
            response,
        })
    }
}

/// In-memory view of a cache file; later records for a digest win.
#[derive(Debug, Default)]
pub struct ReplayCache {
    records: RwLock<HashMap<String, ReplayRecord>>,
}

impl ReplayCache {
    pub fn load(path: &Path) -> io::Result<Self> {
        let cache = Self::default();
        let reader = BufReader::new(File::open(path)?);
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record = ReplayRecord::parse_line(&line).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), n + 1))
            })?;
            cache.insert(record);
        }
        Ok(cache)
    }

    pub fn insert(&self, record: ReplayRecord) {
        self.records.write().unwrap().insert(record.digest.clone(), record);
    }

    pub fn get(&self, digest: &str) -> Option<ReplayRecord> {
        self.records.read().unwrap().get(digest).cloned()
    }

    pub fn len(&self) -> usize {
        self.records.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Serves recorded responses; unrecorded prompts are a cache miss.
pub struct ReplayBackend {
    cache: Arc<ReplayCache>,
}

impl ReplayBackend {
    pub fn open(path: &Path) -> io::Result<Self> {
        Ok(Self {
            cache: Arc::new(ReplayCache::load(path)?),
        })
    }

    pub fn from_cache(cache: Arc<ReplayCache>) -> Self {
        Self { cache }
    }
}

#[async_trait]
impl Backend for ReplayBackend {
    fn id(&self) -> String {
        "replay".into()
    }

    async fn send(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        self.cache
            .get(&prompt_digest(request.tag.round, &request.prompt))
            .map(|r| r.response)
            .ok_or_else(|| BackendError::CacheMiss(request.tag.clone()))
    }
}

/// Forwards to another backend and appends every success to a cache file.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    path: PathBuf,
    file: Mutex<File>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>, path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[async_trait]
impl Backend for RecordingBackend {
    fn id(&self) -> String {
        self.inner.id()
    }

    async fn send(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let response = self.inner.send(request).await?;
        let record = ReplayRecord {
            digest: prompt_digest(request.tag.round, &request.prompt),
            backend: self.inner.id(),
            response: response.clone(),
        };
        let mut file = self.file.lock().unwrap();
        writeln!(file, "{}", record.to_line()).map_err(|e| BackendError::Fatal(format!("cache write failed: {e}")))?;
        Ok(response)
    }
}
