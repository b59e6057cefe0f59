use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use super::{Actor, EventPayload, GardenEvent, GardenState, PersistenceError};

/// Append-only event log, mirrored to a line-delimited JSON file when opened
/// on a path. Each append is flushed before it returns.
#[derive(Debug, Default)]
pub struct EventLog {
    events: Vec<GardenEvent>,
    path: Option<PathBuf>,
    file: Option<File>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a log file and loads the events already in it.
    pub fn open(path: &Path) -> Result<Self, PersistenceError> {
        let mut events = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: GardenEvent = serde_json::from_str(&line)
                    .map_err(|e| PersistenceError::CorruptDocument(format!("events.log line {}: {e}", i + 1)))?;
                let expected = events.len() as u64;
                if event.seq != expected {
                    return Err(PersistenceError::SequenceGap { expected, found: event.seq });
                }
                events.push(event);
            }
        } else if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { events, path: Some(path.to_path_buf()), file: Some(file) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn events(&self) -> &[GardenEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.events.len() as u64
    }

    /// Stamps and appends an event.
    pub fn append(&mut self, actor: Actor, payload: EventPayload) -> Result<&GardenEvent, PersistenceError> {
        let timestamp_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        let event = GardenEvent { seq: self.next_seq(), timestamp_ms, actor, payload };
        if let Some(file) = &mut self.file {
            let mut line = serde_json::to_string(&event).expect("event serializes");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        self.events.push(event);
        Ok(self.events.last().expect("just pushed"))
    }
}

/// Rebuilds state from a complete log, checking sequence continuity.
pub fn replay_events(events: &[GardenEvent]) -> Result<GardenState, PersistenceError> {
    let mut state = GardenState::empty();
    for (i, event) in events.iter().enumerate() {
        if event.seq != i as u64 {
            return Err(PersistenceError::SequenceGap { expected: i as u64, found: event.seq });
        }
        state.apply(&event.payload)?;
    }
    Ok(state)
}
