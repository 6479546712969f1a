//! Append-only JSON-lines result store.
//!
//! Each line is `{"schema":1,"checksum":"<sha256>","record":{...}}` where the
//! checksum covers the exact bytes of the record object as written. Lines that
//! fail to parse or verify (a torn final write) are dropped when the store is
//! opened.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use responder_core::sweep::{RunRecord, SCHEMA_VERSION};
use crate::error::{BenchError, Result};
use crate::manifest::sha256_hex;

#[derive(Debug)]
pub struct ResultStore {
    path: PathBuf,
    file: File,
    records: Vec<RunRecord>,
    index: BTreeMap<String, usize>,
    dropped: usize,
}

/// Store line for a record.
pub fn encode_line(record: &RunRecord) -> String {
    let body = serde_json::to_string(record).expect("records serialize");
    format!(r#"{{"schema":{SCHEMA_VERSION},"checksum":"{}","record":{body}}}"#, sha256_hex(body.as_bytes()))
}

/// Parses and verifies one line; `None` if it is torn or corrupt.
pub fn decode_line(line: &str) -> Option<RunRecord> {
    let rest = line.strip_prefix(&format!(r#"{{"schema":{SCHEMA_VERSION},"checksum":""#))?;
    let (checksum, rest) = rest.split_once('"')?;
    let body = rest.strip_prefix(r#","record":"#)?.strip_suffix('}')?;
    if checksum != sha256_hex(body.as_bytes()) {
        return None;
    }
    let r: RunRecord = serde_json::from_str(body).ok()?;
    r.validate().ok()?;
    Some(r)
}

/// Reads every valid record; also returns how many lines were dropped.
/// Later duplicates of a hash are ignored.
pub fn load(path: &Path) -> Result<(Vec<RunRecord>, usize)> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(BenchError::io(path, e)),
    };
    let mut seen = BTreeMap::new();
    let mut records = Vec::new();
    let mut dropped = 0;
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        // an unterminated last line is a torn write even if it happens to parse
        let torn = i + 1 == lines.len() && !complete;
        match decode_line(line).filter(|_| !torn) {
            Some(r) => {
                if seen.insert(r.hash.clone(), ()).is_none() {
                    records.push(r);
                }
            }
            None => dropped += 1,
        }
    }
    Ok((records, dropped))
}

impl ResultStore {
    /// Opens or creates the store. A store with dropped lines is rewritten
    /// with only its valid records before new ones are appended.
    pub fn open(path: &Path) -> Result<Self> {
        let (records, dropped) = load(path)?;
        if dropped > 0 {
            let tmp = path.with_extension("jsonl.tmp");
            let text: String = records.iter().map(|r| encode_line(r) + "\n").collect();
            std::fs::write(&tmp, text).map_err(|e| BenchError::io(&tmp, e))?;
            std::fs::rename(&tmp, path).map_err(|e| BenchError::io(path, e))?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| BenchError::io(path, e))?;
        let index = records.iter().enumerate().map(|(i, r)| (r.hash.clone(), i)).collect();
        Ok(Self { path: path.to_path_buf(), file, records, index, dropped })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<RunRecord> {
        self.records
    }

    pub fn contains(&self, hash: &str) -> bool {
        self.index.contains_key(hash)
    }

    pub fn get(&self, hash: &str) -> Option<&RunRecord> {
        self.index.get(hash).map(|&i| &self.records[i])
    }

    /// Lines dropped when the store was opened.
    pub fn dropped_lines(&self) -> usize {
        self.dropped
    }

    /// Appends and syncs one record. Returns false, writing nothing, when a
    /// record with the same hash is already stored.
    pub fn append(&mut self, record: RunRecord) -> Result<bool> {
        if self.contains(&record.hash) {
            return Ok(false);
        }
        record.validate()?;
        let line = encode_line(&record) + "\n";
        self.file.write_all(line.as_bytes()).map_err(|e| BenchError::io(&self.path, e))?;
        self.file.sync_data().map_err(|e| BenchError::io(&self.path, e))?;
        self.index.insert(record.hash.clone(), self.records.len());
        self.records.push(record);
        Ok(true)
    }
}
