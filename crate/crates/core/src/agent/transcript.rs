//! Newline-delimited log of every message exchanged with a backend.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Sent,
    Received,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub episode_id: String,
    pub round: usize,
    pub direction: Direction,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub text: String,
}

/// Collects records from concurrent dialogues. A disabled log drops
/// everything.
#[derive(Debug, Default)]
pub struct TranscriptLog {
    enabled: bool,
    records: Mutex<Vec<TranscriptRecord>>,
}

impl TranscriptLog {
    pub fn new() -> Self {
        Self {
            enabled: true,
            records: Mutex::new(Vec::new()),
        }
    }

    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn record(&self, episode_id: &str, round: usize, direction: Direction, text: &str) {
        if !self.enabled {
            return;
        }
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64);
        self.records
            .lock()
            .expect("transcript lock")
            .push(TranscriptRecord {
                episode_id: episode_id.to_string(),
                round,
                direction,
                timestamp,
                text: text.to_string(),
            });
    }

    /// Records grouped by episode id; order within an episode is preserved.
    pub fn records(&self) -> Vec<TranscriptRecord> {
        let mut out = self.records.lock().expect("transcript lock").clone();
        out.sort_by(|a, b| a.episode_id.cmp(&b.episode_id));
        out
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("transcript lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in self.records() {
            serde_json::to_writer(&mut out, &r)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

pub fn read_transcript(path: impl AsRef<Path>) -> std::io::Result<Vec<TranscriptRecord>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("transcript line {}: {e}", n + 1),
            )
        })?;
        out.push(rec);
    }
    Ok(out)
}
