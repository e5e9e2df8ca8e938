//! Record/replay cassettes: a JSONL map from request hash to response text,
//! letting any run that talked to a live endpoint be replayed offline,
//! byte-exact, with zero network calls.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ClientError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CassetteMode {
    /// Live calls; every response appended to the cassette.
    Record,
    /// No live calls; a request absent from the cassette is an error.
    Replay,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    request_hash: String,
    response: String,
}

/// Hash of the canonical request body; the cassette key.
pub fn request_hash(body: &serde_json::Value) -> String {
    let canon = serde_json::to_string(body).expect("request body serializes");
    let digest = Sha256::digest(canon.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug)]
pub struct Cassette {
    path: PathBuf,
    mode: CassetteMode,
    entries: Mutex<HashMap<String, String>>,
}

impl Cassette {
    /// Open a cassette file, loading any existing entries.
    pub fn open(path: &Path, mode: CassetteMode) -> Result<Self, ClientError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: Entry = serde_json::from_str(&line)
                    .map_err(|e| ClientError::BadResponse(format!("cassette line: {e}")))?;
                entries.insert(entry.request_hash, entry.response);
            }
        }
        Ok(Cassette { path: path.to_path_buf(), mode, entries: Mutex::new(entries) })
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn lookup(&self, hash: &str) -> Option<String> {
        self.entries.lock().unwrap().get(hash).cloned()
    }

    /// Persist one exchange. Duplicate hashes keep the first recording.
    pub fn store(&self, hash: &str, response: &str) -> Result<(), ClientError> {
        let mut entries = self.entries.lock().unwrap();
        if entries.contains_key(hash) {
            return Ok(());
        }
        entries.insert(hash.to_string(), response.to_string());
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let line = serde_json::to_string(&Entry {
            request_hash: hash.to_string(),
            response: response.to_string(),
        })
        .expect("entry serializes");
        writeln!(file, "{line}")?;
        file.sync_data()?;
        Ok(())
    }
}
