//! Record/replay over a newline-delimited store of `{hash, reply}` records.
//!
//! Failed calls are stored too (with `error` instead of `reply`) so a replayed
//! session fails in the same places. Repeated requests with the same hash are
//! served in recorded order; once exhausted the last record keeps answering.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{ChatGateway, ChatRequest, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreMode {
    Record,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<GatewayError>,
}

impl StoreRecord {
    fn outcome(&self) -> Result<String, GatewayError> {
        match (&self.reply, &self.error) {
            (_, Some(err)) => Err(err.clone()),
            (Some(reply), None) => Ok(reply.clone()),
            (None, None) => Err(GatewayError::Storage(format!(
                "record {} has neither reply nor error",
                self.hash
            ))),
        }
    }
}

fn storage(path: &Path, err: impl std::fmt::Display) -> GatewayError {
    GatewayError::Storage(format!("{}: {err}", path.display()))
}

/// Reads every record of a store file.
pub fn read_store(path: &Path) -> Result<Vec<StoreRecord>, GatewayError> {
    let file = File::open(path).map_err(|e| storage(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| storage(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: StoreRecord = serde_json::from_str(&line)
            .map_err(|e| storage(path, format!("line {}: {e}", n + 1)))?;
        records.push(record);
    }
    Ok(records)
}

/// Proxies to `inner` and appends every outcome to the store.
pub struct RecordGateway {
    inner: Arc<dyn ChatGateway>,
    path: PathBuf,
    file: Mutex<File>,
}

impl RecordGateway {
    pub fn new(inner: Arc<dyn ChatGateway>, path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| storage(path, e))?;
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

impl ChatGateway for RecordGateway {
    fn name(&self) -> &str {
        "record"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let outcome = self.inner.complete(request);
        let record = StoreRecord {
            hash: request.hash(),
            reply: outcome.as_ref().ok().cloned(),
            error: outcome.as_ref().err().cloned(),
        };
        let mut line = serde_json::to_string(&record).map_err(|e| storage(&self.path, e))?;
        line.push('\n');
        let mut file = self.file.lock().expect("record store lock");
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| storage(&self.path, e))?;
        outcome
    }
}

/// Serves recorded outcomes; unseen requests are a [`GatewayError::CacheMiss`].
pub struct ReplayGateway {
    records: HashMap<String, Vec<StoreRecord>>,
    served: Mutex<HashMap<String, usize>>,
}

impl ReplayGateway {
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::from_records(read_store(path)?))
    }

    pub fn from_records(records: Vec<StoreRecord>) -> Self {
        let mut by_hash: HashMap<String, Vec<StoreRecord>> = HashMap::new();
        for record in records {
            by_hash.entry(record.hash.clone()).or_default().push(record);
        }
        Self {
            records: by_hash,
            served: Mutex::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl ChatGateway for ReplayGateway {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let hash = request.hash();
        let Some(records) = self.records.get(&hash) else {
            return Err(GatewayError::CacheMiss(hash));
        };
        let mut served = self.served.lock().expect("replay lock");
        let count = served.entry(hash).or_insert(0);
        let record = &records[(*count).min(records.len() - 1)];
        *count += 1;
        record.outcome()
    }
}

/// Builds a record or replay gateway over `store`. Recording needs the
/// gateway to proxy to.
pub fn record_replay(
    mode: StoreMode,
    store: &Path,
    inner: Option<Arc<dyn ChatGateway>>,
) -> Result<Arc<dyn ChatGateway>, GatewayError> {
    match mode {
        StoreMode::Record => {
            let inner = inner.ok_or_else(|| {
                GatewayError::Storage("record mode needs an upstream gateway".into())
            })?;
            Ok(Arc::new(RecordGateway::new(inner, store)?))
        }
        StoreMode::Replay => Ok(Arc::new(ReplayGateway::open(store)?)),
    }
}
