//! Append-only, crash-tolerant log of ingested events and emitted alarms.
//!
//! One record per line, tab-separated, greppable:
//!
//! ```text
//! <iso8601>\t<EVENT|CONFIG|ALARM>\t<socket_id>\t<payload>
//! ```
//!
//! Recovery truncates exactly one unterminated trailing line (a crash mid
//! write); any other malformation is fatal on replay — silent skips would
//! hide data loss.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{SocketId, Timestamp};

#[derive(Debug, Error)]
pub enum StoreError {
    /// Underlying file write failed (disk full, permissions, ...).
    #[error("log storage failure: {0}")]
    Storage(#[from] std::io::Error),
    /// A non-trailing line does not parse as a record.
    #[error("corrupt log record at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

/// What a log line records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Event,
    Config,
    Alarm,
}

impl RecordKind {
    fn token(self) -> &'static str {
        match self {
            RecordKind::Event => "EVENT",
            RecordKind::Config => "CONFIG",
            RecordKind::Alarm => "ALARM",
        }
    }

    fn from_token(s: &str) -> Option<Self> {
        match s {
            "EVENT" => Some(RecordKind::Event),
            "CONFIG" => Some(RecordKind::Config),
            "ALARM" => Some(RecordKind::Alarm),
            _ => None,
        }
    }
}

/// One durable log line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub at: Timestamp,
    pub kind: RecordKind,
    pub socket: SocketId,
    pub payload: String,
}

impl LogRecord {
    pub fn new(at: Timestamp, kind: RecordKind, socket: SocketId, payload: impl Into<String>) -> Self {
        let payload = payload.into();
        debug_assert!(
            !payload.contains('\t') && !payload.contains('\n'),
            "payload must stay single-field"
        );
        LogRecord { at, kind, socket, payload }
    }

    fn parse_line(line: &str, line_no: usize) -> Result<Self, StoreError> {
        let corrupt = |reason: &str| StoreError::Corrupt { line: line_no, reason: reason.to_string() };
        let mut parts = line.splitn(4, '\t');
        let (ts, kind, socket, payload) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
            _ => return Err(corrupt("expected 4 tab-separated fields")),
        };
        Ok(LogRecord {
            at: Timestamp::parse_iso(ts).map_err(|_| corrupt("bad timestamp"))?,
            kind: RecordKind::from_token(kind).ok_or_else(|| corrupt("bad record kind"))?,
            socket: SocketId::new(socket).map_err(|_| corrupt("bad socket id"))?,
            payload: payload.to_string(),
        })
    }
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}", self.at, self.kind.token(), self.socket, self.payload)
    }
}

/// Writer half of the log. Single writer per file; readers may replay closed
/// or quiescent files freely.
pub struct EventLog {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl EventLog {
    /// Open for appending, creating the file if needed. If the previous
    /// writer died mid-line, the partial trailing line is truncated away
    /// before any new append.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let mut file = OpenOptions::new().read(true).create(true).append(true).open(&path)?;
        let valid_len = recovered_length(&mut file)?;
        if valid_len < file.metadata()?.len() {
            file.set_len(valid_len)?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok(EventLog { path, writer: BufWriter::new(file) })
    }

    /// Durably append one record; flushed before returning.
    pub fn append(&mut self, record: &LogRecord) -> Result<(), StoreError> {
        writeln!(self.writer, "{record}")?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Byte length of the file up to and including its last `\n`.
fn recovered_length(file: &mut File) -> Result<u64, StoreError> {
    let mut contents = Vec::new();
    file.seek(SeekFrom::Start(0))?;
    file.read_to_end(&mut contents)?;
    match contents.iter().rposition(|&b| b == b'\n') {
        Some(pos) => Ok(pos as u64 + 1),
        None => Ok(0),
    }
}

/// Everything a replay yields.
#[derive(Debug, Default)]
pub struct Replay {
    pub records: Vec<LogRecord>,
    /// True when an unterminated trailing line was dropped.
    pub truncated_tail: bool,
}

/// Read records in file order, optionally keeping only `at` within
/// `[from, to]` (inclusive). A missing file reads as an empty log. An
/// unterminated trailing line is dropped with a warning flag, never yielded;
/// a malformed terminated line anywhere fails fast with `Corrupt`.
pub fn replay(path: impl AsRef<Path>, range: Option<(Timestamp, Timestamp)>) -> Result<Replay, StoreError> {
    let path = path.as_ref();
    let contents = match std::fs::read_to_string(path) {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Replay::default()),
        Err(e) => return Err(StoreError::Storage(e)),
    };
    let mut out = Replay::default();
    let mut rest = contents.as_str();
    let mut line_no = 0;
    while !rest.is_empty() {
        line_no += 1;
        let (line, tail, terminated) = match rest.split_once('\n') {
            Some((line, tail)) => (line, tail, true),
            None => (rest, "", false),
        };
        rest = tail;
        if !terminated {
            out.truncated_tail = true;
            break;
        }
        let record = LogRecord::parse_line(line, line_no)?;
        let keep = match range {
            Some((from, to)) => record.at >= from && record.at <= to,
            None => true,
        };
        if keep {
            out.records.push(record);
        }
    }
    Ok(out)
}
