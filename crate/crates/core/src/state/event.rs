use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::judge::Verdict;

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContestEvent {
    pub seq: u64,
    /// Contest-relative seconds.
    pub at: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseVerdict {
    pub case: String,
    pub verdict: Verdict,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventKind {
    ContestStarted {
        pack_digest: String,
        name: String,
        /// Minutes, after any operator override.
        duration: u64,
        started_at_ms: u64,
    },
    ContestantRegistered {
        contestant: String,
        token_sha256: String,
    },
    SubmissionReceived {
        contestant: String,
        problem: String,
        submission: u64,
        check: bool,
    },
    EvaluationCompleted {
        contestant: String,
        problem: String,
        submission: u64,
        check: bool,
        submitted_at: u64,
        aggregate: Verdict,
        per_test: Vec<CaseVerdict>,
    },
    HintRequested {
        contestant: String,
        problem: String,
        index: u32,
    },
    ProblemUnlocked {
        contestant: String,
        problem: String,
    },
    ContestEnded,
}

#[derive(Debug, thiserror::Error)]
pub enum LogReadError {
    #[error("reading event log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("event log line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Append-only JSONL event store. Every append is flushed to disk before it
/// becomes visible in memory.
#[derive(Debug)]
pub struct EventLog {
    file: Option<File>,
    path: Option<PathBuf>,
    events: Vec<ContestEvent>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        EventLog {
            file: None,
            path: None,
            events: Vec::new(),
        }
    }

    /// Starts a new log; fails if `path` already exists.
    pub fn create(path: &Path) -> io::Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().append(true).create_new(true).open(path)?;
        Ok(EventLog {
            file: Some(file),
            path: Some(path.to_path_buf()),
            events: Vec::new(),
        })
    }

    /// Reopens an existing log for appending after its events were read.
    pub fn reopen(path: &Path, events: Vec<ContestEvent>) -> io::Result<Self> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(EventLog {
            file: Some(file),
            path: Some(path.to_path_buf()),
            events,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn events(&self) -> &[ContestEvent] {
        &self.events
    }

    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }

    /// Writes and fsyncs `event`, which must carry the next sequence number.
    pub fn append(&mut self, event: ContestEvent) -> io::Result<()> {
        if event.seq != self.last_seq() + 1 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("event seq {} does not follow {}", event.seq, self.last_seq()),
            ));
        }
        if let Some(file) = &mut self.file {
            let mut line = serde_json::to_vec(&event).map_err(io::Error::other)?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
        }
        self.events.push(event);
        Ok(())
    }

    pub fn sync(&mut self) -> io::Result<()> {
        match &mut self.file {
            Some(f) => f.sync_all(),
            None => Ok(()),
        }
    }
}

pub fn read_log(path: &Path) -> Result<Vec<ContestEvent>, LogReadError> {
    let io_err = |source| LogReadError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| LogReadError::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}
