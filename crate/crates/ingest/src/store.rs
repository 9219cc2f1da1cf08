//! Append-only JSON-lines detection store.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use woodpest::audio::ClipLabel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub timestamp: DateTime<Utc>,
    pub device_id: u64,
    /// Index of the clip's first sample in the device stream, at the device rate.
    pub clip_start: u64,
    /// Clip length in samples at the device rate.
    pub clip_length: u64,
    pub label: ClipLabel,
    pub p_infested: f64,
    pub checkpoint_id: String,
}

/// Single writer fed through a channel; records are flushed line by line.
pub struct StoreWriter {
    tx: Option<Sender<DetectionRecord>>,
    worker: Option<JoinHandle<io::Result<()>>>,
    written: Arc<AtomicU64>,
    path: PathBuf,
}

impl StoreWriter {
    /// Opens (creating if needed) `path` for appending.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        let (tx, rx) = mpsc::channel::<DetectionRecord>();
        let written = Arc::new(AtomicU64::new(0));
        let counter = Arc::clone(&written);
        let worker = thread::Builder::new().name("store-writer".into()).spawn(move || {
            for record in rx {
                let mut line = serde_json::to_vec(&record).map_err(io::Error::other)?;
                line.push(b'\n');
                file.write_all(&line)?;
                file.flush()?;
                counter.fetch_add(1, Ordering::SeqCst);
            }
            file.sync_all()
        })?;
        Ok(Self { tx: Some(tx), worker: Some(worker), written, path })
    }

    /// A handle other threads use to queue records.
    pub fn sender(&self) -> Sender<DetectionRecord> {
        self.tx.clone().expect("writer is open")
    }

    pub fn written(&self) -> Arc<AtomicU64> {
        Arc::clone(&self.written)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Drains queued records and closes the file. Blocks until every sender is dropped.
    pub fn close(mut self) -> io::Result<()> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> io::Result<()> {
        self.tx.take();
        match self.worker.take() {
            Some(w) => w.join().map_err(|_| io::Error::other("store writer panicked"))?,
            None => Ok(()),
        }
    }
}

impl Drop for StoreWriter {
    fn drop(&mut self) {
        if let Err(e) = self.shutdown() {
            log::error!("closing detection store {}: {e}", self.path.display());
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreFilter {
    pub device_id: Option<u64>,
    /// Inclusive lower bound.
    pub since: Option<DateTime<Utc>>,
    /// Exclusive upper bound.
    pub until: Option<DateTime<Utc>>,
    pub label: Option<ClipLabel>,
}

impl StoreFilter {
    pub fn matches(&self, r: &DetectionRecord) -> bool {
        self.device_id.map_or(true, |d| r.device_id == d)
            && self.since.map_or(true, |t| r.timestamp >= t)
            && self.until.map_or(true, |t| r.timestamp < t)
            && self.label.map_or(true, |l| r.label == l)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub records: Vec<DetectionRecord>,
    /// Lines that failed to parse.
    pub skipped: usize,
}

/// Matching records in timestamp order (file order among equal timestamps).
pub fn query_store(path: impl AsRef<Path>, filter: &StoreFilter) -> io::Result<QueryResult> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = QueryResult::default();
    for (n, line) in reader.split(b'\n').enumerate() {
        let line = line?;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match serde_json::from_slice::<DetectionRecord>(&line) {
            Ok(r) if filter.matches(&r) => out.records.push(r),
            Ok(_) => {}
            Err(e) => {
                log::warn!("store line {}: {e}", n + 1);
                out.skipped += 1;
            }
        }
    }
    out.records.sort_by_key(|r| r.timestamp);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(device_id: u64, secs: i64, label: ClipLabel) -> DetectionRecord {
        DetectionRecord {
            timestamp: DateTime::from_timestamp(1_700_000_000 + secs, 0).unwrap(),
            device_id,
            clip_start: 0,
            clip_length: 80_000,
            label,
            p_infested: if label == ClipLabel::Infested { 0.9 } else { 0.1 },
            checkpoint_id: "m".into(),
        }
    }

    #[test]
    fn write_then_query() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let writer = StoreWriter::open(&path).unwrap();
        let tx = writer.sender();
        tx.send(record(2, 5, ClipLabel::Infested)).unwrap();
        tx.send(record(1, 1, ClipLabel::Clean)).unwrap();
        drop(tx);
        writer.close().unwrap();
        std::fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{not json\n").unwrap();

        let all = query_store(&path, &StoreFilter::default()).unwrap();
        assert_eq!(all.records.len(), 2);
        assert_eq!(all.skipped, 1);
        assert_eq!(all.records[0].device_id, 1);
        let inf = query_store(&path, &StoreFilter { label: Some(ClipLabel::Infested), ..Default::default() }).unwrap();
        assert_eq!(inf.records, vec![record(2, 5, ClipLabel::Infested)]);
    }

    #[test]
    fn empty_store() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        StoreWriter::open(&path).unwrap().close().unwrap();
        assert_eq!(query_store(&path, &StoreFilter::default()).unwrap(), QueryResult::default());
    }

    #[test]
    fn timestamps_are_iso8601() {
        let line = serde_json::to_string(&record(1, 0, ClipLabel::Clean)).unwrap();
        assert!(line.contains("\"timestamp\":\"2023-11-14T22:13:20Z\""), "{line}");
    }
}
