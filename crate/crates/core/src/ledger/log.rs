// SPDX-License-Identifier: Apache-2.0

//! Newline-delimited JSON log with durable appends.
//!
//! Every append is a single `write_all` of one complete line followed by
//! `sync_data`, so a crash can only ever leave a partial *final* line. On
//! open, a final entry that does not parse is reported and truncated away:
//! the log is rewound to the end of the last good record so later appends
//! never get glued onto garbage.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("log {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("log {path} is held by another writer")]
    Locked { path: PathBuf },
    #[error("log {path}: corrupt record at line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("serialize record: {0}")]
    Encode(#[from] serde_json::Error),
}

/// Recovery note produced when a torn tail is discarded on open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TornTail {
    pub line: usize,
    pub discarded_bytes: u64,
}

/// Result of opening a log: the writer plus every intact record.
pub struct Opened<T> {
    pub log: JsonlLog<T>,
    pub records: Vec<T>,
    pub torn: Option<TornTail>,
}

pub struct JsonlLog<T> {
    path: PathBuf,
    file: File,
    len: u64,
    _record: PhantomData<fn() -> T>,
}

impl<T: Serialize + DeserializeOwned> JsonlLog<T> {
    /// Opens (creating if needed) the log at `path`, takes the exclusive
    /// writer lock and replays intact records.
    pub fn open(path: impl AsRef<Path>) -> Result<Opened<T>, LogError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| LogError::Io { path: path.clone(), source };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)
            .map_err(io_err)?;
        if file.try_lock().is_err() {
            return Err(LogError::Locked { path });
        }

        let mut raw = Vec::new();
        file.read_to_end(&mut raw).map_err(io_err)?;

        let mut records = Vec::new();
        let mut good_len = 0u64;
        let mut torn = None;
        let mut offset = 0usize;
        let mut line_no = 0usize;
        while offset < raw.len() {
            line_no += 1;
            let (line, next, terminated) = match raw[offset..].iter().position(|b| *b == b'\n') {
                Some(nl) => (&raw[offset..offset + nl], offset + nl + 1, true),
                None => (&raw[offset..], raw.len(), false),
            };
            let is_last = next >= raw.len();
            match serde_json::from_slice::<T>(line) {
                Ok(record) if terminated => {
                    records.push(record);
                    good_len = next as u64;
                }
                Ok(_) | Err(_) if is_last => {
                    torn = Some(TornTail {
                        line: line_no,
                        discarded_bytes: (raw.len() - offset) as u64,
                    });
                }
                Ok(_) => unreachable!("an unterminated line is always the last"),
                Err(err) => {
                    return Err(LogError::Corrupt {
                        path,
                        line: line_no,
                        reason: err.to_string(),
                    });
                }
            }
            offset = next;
        }

        if let Some(tail) = &torn {
            tracing::warn!(
                path = %path.display(),
                line = tail.line,
                bytes = tail.discarded_bytes,
                "discarding torn final log entry"
            );
            file.set_len(good_len).map_err(io_err)?;
            file.sync_all().map_err(io_err)?;
        }
        file.seek(SeekFrom::Start(good_len)).map_err(io_err)?;

        Ok(Opened {
            log: JsonlLog {
                path,
                file,
                len: good_len,
                _record: PhantomData,
            },
            records,
            torn,
        })
    }

    /// Appends one record and syncs it to disk. Returns the byte offset at
    /// which the record starts.
    pub fn append(&mut self, record: &T) -> Result<u64, LogError> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let offset = self.len;
        let io_err = |source| LogError::Io { path: self.path.clone(), source };
        self.file.write_all(&line).map_err(io_err)?;
        self.file.sync_data().map_err(io_err)?;
        self.len += line.len() as u64;
        Ok(offset)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len_bytes(&self) -> u64 {
        self.len
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Entry {
        n: u32,
        tag: String,
    }

    fn entry(n: u32) -> Entry {
        Entry { n, tag: format!("t{n}") }
    }

    #[test]
    fn appends_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        {
            let opened = JsonlLog::<Entry>::open(&path).unwrap();
            let mut log = opened.log;
            assert!(opened.records.is_empty());
            assert_eq!(log.append(&entry(1)).unwrap(), 0);
            log.append(&entry(2)).unwrap();
        }
        let opened = JsonlLog::<Entry>::open(&path).unwrap();
        assert_eq!(opened.records, vec![entry(1), entry(2)]);
        assert!(opened.torn.is_none());
    }

    #[test]
    fn torn_tail_is_discarded_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        {
            let mut log = JsonlLog::<Entry>::open(&path).unwrap().log;
            log.append(&entry(1)).unwrap();
            log.append(&entry(2)).unwrap();
        }
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 5]).unwrap();

        let opened = JsonlLog::<Entry>::open(&path).unwrap();
        assert_eq!(opened.records, vec![entry(1)]);
        assert_eq!(opened.torn.as_ref().unwrap().line, 2);
        let mut log = opened.log;
        log.append(&entry(3)).unwrap();
        drop(log);

        let reopened = JsonlLog::<Entry>::open(&path).unwrap();
        assert_eq!(reopened.records, vec![entry(1), entry(3)]);
        assert!(reopened.torn.is_none());
    }

    #[test]
    fn unparseable_final_line_with_newline_is_also_torn() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(&path, "{\"n\":1,\"tag\":\"t1\"}\n{\"n\":2,\n").unwrap();
        let opened = JsonlLog::<Entry>::open(&path).unwrap();
        assert_eq!(opened.records, vec![entry(1)]);
        assert!(opened.torn.is_some());
    }

    #[test]
    fn corruption_before_the_tail_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(&path, "garbage\n{\"n\":2,\"tag\":\"t2\"}\n").unwrap();
        match JsonlLog::<Entry>::open(&path) {
            Err(LogError::Corrupt { line: 1, .. }) => {}
            other => panic!("expected corruption error, got {:?}", other.map(|o| o.records)),
        }
    }

    #[test]
    fn second_writer_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let _first = JsonlLog::<Entry>::open(&path).unwrap();
        assert!(matches!(JsonlLog::<Entry>::open(&path), Err(LogError::Locked { .. })));
    }
}
