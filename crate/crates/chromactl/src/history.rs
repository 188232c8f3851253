//! Append-only run history, one JSON record per line.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::pipeline::RunRecord;

#[derive(Debug)]
struct Inner {
    records: Vec<RunRecord>,
    file: Option<File>,
}

/// Run history. Ids are assigned on append and strictly increase.
#[derive(Debug)]
pub struct History {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl History {
    pub fn in_memory() -> Self {
        History {
            path: None,
            inner: Mutex::new(Inner {
                records: Vec::new(),
                file: None,
            }),
        }
    }

    /// Open (or create) a history file and replay its records.
    pub fn open(path: &Path) -> io::Result<Self> {
        let records = if path.exists() { read_records(path)? } else { Vec::new() };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(History {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner {
                records,
                file: Some(file),
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Assign the next id, persist, and return the stored record.
    pub fn append(&self, mut record: RunRecord) -> io::Result<RunRecord> {
        let mut inner = self.lock();
        record.id = inner.records.last().map_or(1, |r| r.id + 1);
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_string(&record).map_err(io::Error::other)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        inner.records.push(record.clone());
        Ok(record)
    }

    pub fn get(&self, id: u64) -> Option<RunRecord> {
        self.lock().records.iter().find(|r| r.id == id).cloned()
    }

    /// Up to `limit` records, newest first.
    pub fn recent(&self, limit: usize) -> Vec<RunRecord> {
        self.lock().records.iter().rev().take(limit).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn read_records(path: &Path) -> io::Result<Vec<RunRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RunRecord = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
