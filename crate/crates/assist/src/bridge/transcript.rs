//! Append-only JSONL session transcript.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::actions::{ActionKind, ActionState, ResultRef};
use super::{AutonomyPolicy, ResearchPhase, Role};
use crate::error::{AssistError, Result};

pub trait Clock: Send {
    fn now(&mut self) -> u64;
}

/// Counts 0, 1, 2, ... so that transcripts are reproducible.
#[derive(Debug, Clone, Default)]
pub struct LogicalClock(u64);

impl Clock for LogicalClock {
    fn now(&mut self) -> u64 {
        let t = self.0;
        self.0 += 1;
        t
    }
}

/// Unix time in milliseconds.
#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&mut self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionEvent {
    pub action_id: String,
    pub state: ActionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ActionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ResultRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub ts: u64,
    pub role: Role,
    pub content: String,
    pub phase: ResearchPhase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_event: Option<ActionEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<AutonomyPolicy>,
}

impl TranscriptRecord {
    /// Plain chat traffic, as opposed to bookkeeping records.
    pub fn is_message(&self) -> bool {
        self.action_event.is_none() && self.policy.is_none()
    }
}

/// In-memory record list mirrored line by line to an optional file.
#[derive(Debug)]
pub struct Transcript {
    path: Option<PathBuf>,
    file: Option<File>,
    records: Vec<TranscriptRecord>,
}

impl Transcript {
    pub fn in_memory() -> Self {
        Self { path: None, file: None, records: Vec::new() }
    }

    /// Creates the file; fails if it already exists.
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create_new(true).append(true).open(&path)?;
        Ok(Self { path: Some(path), file: Some(file), records: Vec::new() })
    }

    pub fn read(path: &Path) -> Result<Vec<TranscriptRecord>> {
        let mut out = Vec::new();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line)
                .map_err(|e| AssistError::Document(format!("{}:{}: {e}", path.display(), i + 1)))?;
            out.push(rec);
        }
        Ok(out)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn records(&self) -> &[TranscriptRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn append(&mut self, rec: TranscriptRecord) -> Result<()> {
        if let Some(f) = self.file.as_mut() {
            let mut line = serde_json::to_vec(&rec)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.flush()?;
        }
        self.records.push(rec);
        Ok(())
    }
}
