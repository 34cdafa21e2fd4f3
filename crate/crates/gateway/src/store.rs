//! Append-only persistence: one newline-delimited JSON log per node per UTC
//! day, a sparse `(received_at, offset)` index beside each log, the threshold
//! profile history per node, and one alert log.
//!
//! ```text
//! <root>/alerts.ndjson
//! <root>/nodes/<id>/thresholds.ndjson
//! <root>/nodes/<id>/records-2024-03-01.ndjson
//! <root>/nodes/<id>/records-2024-03-01.idx
//! ```
//!
//! Every append is a single `write_all` of one complete line on an unbuffered
//! file. A crash can leave at most one torn line at the end of a file; it is
//! cut off when the store is reopened.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use breathwatch_core::domain::{Millis, NodeId};
use breathwatch_core::rules::{Acknowledgement, AlertEvent, SampleRecord, ThresholdProfile};
use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One index entry per this many records.
pub const INDEX_STRIDE: u64 = 64;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store i/o at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt line {line} in {path}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("timestamp {0} is outside the supported range")]
    Timestamp(Millis),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Lines of the alert log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlertLogEntry {
    Raised { alert: AlertEvent },
    Cleared { alert: AlertEvent },
    Acked { alert_id: String, ack: Acknowledgement },
}

#[derive(Serialize, Deserialize)]
struct RestartMarker {
    at: Millis,
}

#[derive(Debug)]
struct DayLog {
    date: NaiveDate,
    path: PathBuf,
    index_path: PathBuf,
    /// Bytes of complete lines.
    len: u64,
    count: u64,
    index: Vec<(Millis, u64)>,
}

#[derive(Debug, Default)]
struct NodeLog {
    days: BTreeMap<NaiveDate, DayLog>,
    writer: Option<(NaiveDate, File, File)>,
    count: u64,
    latest: Option<SampleRecord>,
}

/// What reopening found on disk.
#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize)]
pub struct RecoveryReport {
    pub nodes: usize,
    pub records: u64,
    /// Bytes of torn trailing lines that were cut off.
    pub truncated_bytes: u64,
}

pub struct Store {
    root: PathBuf,
    nodes: Mutex<BTreeMap<NodeId, Arc<Mutex<NodeLog>>>>,
    alerts: Mutex<File>,
    recovery: RecoveryReport,
}

fn day_of(at: Millis) -> Result<NaiveDate, StoreError> {
    DateTime::from_timestamp_millis(at)
        .map(|t| t.date_naive())
        .ok_or(StoreError::Timestamp(at))
}

/// Cuts a file back to its last newline. Returns the bytes removed.
fn truncate_torn_tail(path: &Path) -> Result<u64, StoreError> {
    let mut file = OpenOptions::new().read(true).write(true).open(path).map_err(io_err(path))?;
    let len = file.metadata().map_err(io_err(path))?.len();
    if len == 0 {
        return Ok(0);
    }
    let mut keep = len;
    let mut buf = [0u8; 4096];
    loop {
        let start = keep.saturating_sub(buf.len() as u64);
        let n = (keep - start) as usize;
        file.seek(SeekFrom::Start(start)).map_err(io_err(path))?;
        file.read_exact(&mut buf[..n]).map_err(io_err(path))?;
        if let Some(pos) = buf[..n].iter().rposition(|b| *b == b'\n') {
            keep = start + pos as u64 + 1;
            break;
        }
        if start == 0 {
            keep = 0;
            break;
        }
        keep = start;
    }
    if keep < len {
        file.set_len(keep).map_err(io_err(path))?;
        file.sync_all().map_err(io_err(path))?;
    }
    Ok(len - keep)
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

fn append_line<T: Serialize>(file: &mut File, path: &Path, value: &T) -> Result<u64, StoreError> {
    let mut line = serde_json::to_vec(value).expect("store types serialize");
    line.push(b'\n');
    file.write_all(&line).map_err(io_err(path))?;
    Ok(line.len() as u64)
}

impl Store {
    /// Opens (creating if needed) a store directory, repairing torn tails.
    pub fn open(root: &Path) -> Result<Store, StoreError> {
        let nodes_dir = root.join("nodes");
        fs::create_dir_all(&nodes_dir).map_err(io_err(&nodes_dir))?;
        let mut recovery = RecoveryReport::default();

        let alerts_path = root.join("alerts.ndjson");
        if alerts_path.exists() {
            recovery.truncated_bytes += truncate_torn_tail(&alerts_path)?;
        }
        let alerts = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&alerts_path)
            .map_err(io_err(&alerts_path))?;

        let mut nodes = BTreeMap::new();
        for entry in fs::read_dir(&nodes_dir).map_err(io_err(&nodes_dir))? {
            let entry = entry.map_err(io_err(&nodes_dir))?;
            let Some(id) = entry.file_name().to_str().and_then(|s| s.parse::<u16>().ok()) else {
                continue;
            };
            let log = Self::recover_node(&entry.path(), &mut recovery)?;
            recovery.records += log.count;
            nodes.insert(NodeId(id), Arc::new(Mutex::new(log)));
        }
        recovery.nodes = nodes.len();
        Ok(Store {
            root: root.to_path_buf(),
            nodes: Mutex::new(nodes),
            alerts: Mutex::new(alerts),
            recovery,
        })
    }

    fn recover_node(dir: &Path, recovery: &mut RecoveryReport) -> Result<NodeLog, StoreError> {
        let mut log = NodeLog::default();
        for side in ["thresholds.ndjson", "restarts.ndjson"] {
            let path = dir.join(side);
            if path.exists() {
                recovery.truncated_bytes += truncate_torn_tail(&path)?;
            }
        }
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let path = entry.map_err(io_err(dir))?.path();
            let Some(date) = record_date(&path) else {
                continue;
            };
            recovery.truncated_bytes += truncate_torn_tail(&path)?;
            let records: Vec<SampleRecord> = read_lines(&path)?;
            // The index is derived data: rebuild it from the log so it can
            // never point past a repaired tail.
            let mut index = Vec::new();
            let mut offset = 0u64;
            let file = File::open(&path).map_err(io_err(&path))?;
            let mut reader = BufReader::new(file);
            let mut line = Vec::new();
            let mut n = 0u64;
            loop {
                line.clear();
                let read = reader.read_until(b'\n', &mut line).map_err(io_err(&path))?;
                if read == 0 {
                    break;
                }
                if n.is_multiple_of(INDEX_STRIDE) {
                    index.push((records[n as usize].sample.received_at, offset));
                }
                offset += read as u64;
                n += 1;
            }
            let index_path = path.with_extension("idx");
            let mut idx_text = String::new();
            for (at, off) in &index {
                idx_text.push_str(&format!("{at} {off}\n"));
            }
            fs::write(&index_path, idx_text).map_err(io_err(&index_path))?;
            log.count += records.len() as u64;
            if let Some(last) = records.last() {
                if log.latest.is_none_or(|l| l.sample.received_at <= last.sample.received_at) {
                    log.latest = Some(*last);
                }
            }
            log.days.insert(
                date,
                DayLog {
                    date,
                    path,
                    index_path,
                    len: offset,
                    count: records.len() as u64,
                    index,
                },
            );
        }
        Ok(log)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn recovery(&self) -> &RecoveryReport {
        &self.recovery
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.lock().expect("store lock").keys().copied().collect()
    }

    fn node(&self, node: NodeId) -> Result<Arc<Mutex<NodeLog>>, StoreError> {
        let mut nodes = self.nodes.lock().expect("store lock");
        if let Some(log) = nodes.get(&node) {
            return Ok(log.clone());
        }
        let dir = self.node_dir(node);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let log = Arc::new(Mutex::new(NodeLog::default()));
        nodes.insert(node, log.clone());
        Ok(log)
    }

    fn existing(&self, node: NodeId) -> Option<Arc<Mutex<NodeLog>>> {
        self.nodes.lock().expect("store lock").get(&node).cloned()
    }

    fn node_dir(&self, node: NodeId) -> PathBuf {
        self.root.join("nodes").join(node.0.to_string())
    }

    pub fn append_record(&self, record: &SampleRecord) -> Result<(), StoreError> {
        let at = record.sample.received_at;
        let date = day_of(at)?;
        let log = self.node(record.sample.node_id)?;
        let mut log = log.lock().expect("node log lock");
        let dir = self.node_dir(record.sample.node_id);
        if log.writer.as_ref().is_none_or(|(d, _, _)| *d != date) {
            let path = dir.join(format!("records-{date}.ndjson"));
            let index_path = path.with_extension("idx");
            let open = |p: &Path| OpenOptions::new().create(true).append(true).open(p).map_err(io_err(p));
            let file = open(&path)?;
            let idx = open(&index_path)?;
            log.days.entry(date).or_insert_with(|| DayLog {
                date,
                path,
                index_path,
                len: 0,
                count: 0,
                index: Vec::new(),
            });
            log.writer = Some((date, file, idx));
        }
        let NodeLog {
            days,
            writer,
            count,
            latest,
        } = &mut *log;
        let (_, file, idx) = writer.as_mut().expect("writer opened above");
        let day = days.get_mut(&date).expect("day registered above");
        let offset = day.len;
        if day.count % INDEX_STRIDE == 0 {
            idx.write_all(format!("{at} {offset}\n").as_bytes())
                .map_err(io_err(&day.index_path))?;
            day.index.push((at, offset));
        }
        day.len += append_line(file, &day.path, record)?;
        day.count += 1;
        *count += 1;
        *latest = Some(*record);
        Ok(())
    }

    pub fn record_count(&self, node: NodeId) -> u64 {
        self.existing(node).map_or(0, |l| l.lock().expect("node log lock").count)
    }

    pub fn latest(&self, node: NodeId) -> Option<SampleRecord> {
        self.existing(node).and_then(|l| l.lock().expect("node log lock").latest)
    }

    /// Records with `from <= received_at < to`, in append order.
    pub fn range(&self, node: NodeId, from: Millis, to: Millis) -> Result<Vec<SampleRecord>, StoreError> {
        let Some(log) = self.existing(node) else {
            return Ok(Vec::new());
        };
        if from >= to {
            return Ok(Vec::new());
        }
        // Snapshot lengths so a concurrent append is never read half-written.
        let days: Vec<(PathBuf, u64, Vec<(Millis, u64)>)> = {
            let log = log.lock().expect("node log lock");
            let first = day_of(from.max(0)).ok();
            let last = day_of(to.saturating_sub(1)).ok();
            log.days
                .values()
                .filter(|d| first.is_none_or(|f| d.date >= f) && last.is_none_or(|l| d.date <= l))
                .map(|d| (d.path.clone(), d.len, d.index.clone()))
                .collect()
        };
        let mut out = Vec::new();
        for (path, len, index) in days {
            let start = index
                .iter()
                .take_while(|(at, _)| *at <= from)
                .last()
                .map_or(0, |(_, off)| *off);
            let mut file = File::open(&path).map_err(io_err(&path))?;
            file.seek(SeekFrom::Start(start)).map_err(io_err(&path))?;
            let reader = BufReader::new(file.take(len - start));
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io_err(&path))?;
                let record: SampleRecord = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                    path: path.clone(),
                    line: i + 1,
                    reason: e.to_string(),
                })?;
                let at = record.sample.received_at;
                if at >= to {
                    break;
                }
                if at >= from {
                    out.push(record);
                }
            }
        }
        Ok(out)
    }

    pub fn all_records(&self, node: NodeId) -> Result<Vec<SampleRecord>, StoreError> {
        self.range(node, Millis::MIN, Millis::MAX)
    }

    pub fn append_profile(&self, node: NodeId, profile: &ThresholdProfile) -> Result<(), StoreError> {
        self.node(node)?;
        let path = self.node_dir(node).join("thresholds.ndjson");
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        append_line(&mut file, &path, profile)?;
        Ok(())
    }

    /// Every stored profile version for a node, oldest first.
    pub fn profiles(&self, node: NodeId) -> Result<Vec<ThresholdProfile>, StoreError> {
        let path = self.node_dir(node).join("thresholds.ndjson");
        if !path.exists() {
            return Ok(Vec::new());
        }
        read_lines(&path)
    }

    /// Marks that sequence tracking restarted at the record stamped `at`.
    pub fn append_restart(&self, node: NodeId, at: Millis) -> Result<(), StoreError> {
        self.node(node)?;
        let path = self.node_dir(node).join("restarts.ndjson");
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        append_line(&mut file, &path, &RestartMarker { at })?;
        Ok(())
    }

    pub fn restarts(&self, node: NodeId) -> Result<Vec<Millis>, StoreError> {
        let path = self.node_dir(node).join("restarts.ndjson");
        if !path.exists() {
            return Ok(Vec::new());
        }
        Ok(read_lines::<RestartMarker>(&path)?.into_iter().map(|m| m.at).collect())
    }

    pub fn append_alert(&self, entry: &AlertLogEntry) -> Result<(), StoreError> {
        let path = self.root.join("alerts.ndjson");
        let mut file = self.alerts.lock().expect("alert log lock");
        append_line(&mut file, &path, entry)?;
        Ok(())
    }

    pub fn alert_log(&self) -> Result<Vec<AlertLogEntry>, StoreError> {
        read_lines(&self.root.join("alerts.ndjson"))
    }
}

fn record_date(path: &Path) -> Option<NaiveDate> {
    path.file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("records-"))
        .and_then(|n| n.strip_suffix(".ndjson"))
        .and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok())
}

/// Reads every node's complete records without modifying the store, so it is
/// safe while a gateway is appending. A torn trailing line is skipped.
pub fn read_all_records(root: &Path) -> Result<BTreeMap<NodeId, Vec<SampleRecord>>, StoreError> {
    let nodes_dir = root.join("nodes");
    let mut out = BTreeMap::new();
    if !nodes_dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(&nodes_dir).map_err(io_err(&nodes_dir))? {
        let entry = entry.map_err(io_err(&nodes_dir))?;
        let Some(id) = entry.file_name().to_str().and_then(|s| s.parse::<u16>().ok()) else {
            continue;
        };
        let mut days = BTreeMap::new();
        for file in fs::read_dir(entry.path()).map_err(io_err(&entry.path()))? {
            let path = file.map_err(io_err(&entry.path()))?.path();
            if let Some(date) = record_date(&path) {
                days.insert(date, path);
            }
        }
        let mut records = Vec::new();
        for path in days.values() {
            let bytes = fs::read(path).map_err(io_err(path))?;
            let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
            for (i, line) in bytes[..complete].split(|b| *b == b'\n').enumerate() {
                if line.is_empty() {
                    continue;
                }
                records.push(serde_json::from_slice(line).map_err(|e| StoreError::Corrupt {
                    path: path.clone(),
                    line: i + 1,
                    reason: e.to_string(),
                })?);
            }
        }
        out.insert(NodeId(id), records);
    }
    Ok(out)
}
