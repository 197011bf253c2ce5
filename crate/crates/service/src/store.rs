//! Append-only event logs and atomic state snapshots.
//!
//! Layout: `<data_dir>/campaigns/<id>/events.jsonl` and `state.json`.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::campaign::{CampaignState, Engine, Event};
use crate::error::ApiError;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "state.json";

pub fn campaigns_dir(data_dir: &Path) -> PathBuf {
    data_dir.join("campaigns")
}

fn io(context: &str, e: std::io::Error) -> ApiError {
    ApiError::internal(format!("{context}: {e}"))
}

/// An open event log for one campaign.
#[derive(Debug)]
pub struct EventLog {
    dir: PathBuf,
    file: File,
}

impl EventLog {
    pub fn create(dir: &Path) -> Result<Self, ApiError> {
        std::fs::create_dir_all(dir).map_err(|e| io("creating campaign directory", e))?;
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(dir.join(EVENTS_FILE))
            .map_err(|e| io("creating event log", e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            file,
        })
    }

    /// Opens an existing log for appending, first cutting off any torn tail.
    pub fn open(dir: &Path) -> Result<Self, ApiError> {
        let (_, intact) = read_log(dir)?;
        let path = dir.join(EVENTS_FILE);
        let len = std::fs::metadata(&path).map_err(|e| io("opening event log", e))?.len();
        if len > intact {
            let f = OpenOptions::new().write(true).open(&path).map_err(|e| io("opening event log", e))?;
            f.set_len(intact).map_err(|e| io("truncating torn event", e))?;
            f.sync_all().map_err(|e| io("truncating torn event", e))?;
        }
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| io("opening event log", e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            file,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends one event and flushes it to stable storage.
    pub fn append(&mut self, event: &Event) -> Result<(), ApiError> {
        let mut line = serde_json::to_vec(event).map_err(|e| ApiError::internal(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| io("appending event", e))?;
        self.file.sync_data().map_err(|e| io("syncing event log", e))
    }
}

pub fn read_events(dir: &Path) -> Result<Vec<Event>, ApiError> {
    read_log(dir).map(|(events, _)| events)
}

/// Events plus the byte length of the intact prefix of the log.
fn read_log(dir: &Path) -> Result<(Vec<Event>, u64), ApiError> {
    let file = File::open(dir.join(EVENTS_FILE)).map_err(|e| io("reading event log", e))?;
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut intact = 0u64;
    let mut line = String::new();
    for lineno in 1.. {
        line.clear();
        let read = reader.read_line(&mut line).map_err(|e| io("reading event log", e))?;
        if read == 0 {
            break;
        }
        if line.trim().is_empty() {
            if line.ends_with('\n') {
                intact += read as u64;
            }
            continue;
        }
        match serde_json::from_str::<Event>(line.trim_end()) {
            Ok(ev) if line.ends_with('\n') => {
                out.push(ev);
                intact += read as u64;
            }
            // A torn final line is what an interrupted append leaves behind.
            Ok(_) => {
                log::warn!("{}: ignoring unterminated event on line {lineno}", dir.display());
                break;
            }
            Err(e) if e.is_eof() => {
                log::warn!("{}: ignoring truncated event on line {lineno}", dir.display());
                break;
            }
            Err(e) => {
                return Err(ApiError::internal(format!("{}: corrupt event on line {lineno}: {e}", dir.display())))
            }
        }
    }
    Ok((out, intact))
}

/// Rebuilds a campaign by applying its events in order.
pub fn replay(events: &[Event]) -> Result<Engine, ApiError> {
    let (first, rest) = events
        .split_first()
        .ok_or_else(|| ApiError::internal("empty event log"))?;
    let mut engine = Engine::create(first)?;
    for ev in rest {
        engine.apply(ev)?;
    }
    Ok(engine)
}

pub fn replay_dir(dir: &Path) -> Result<Engine, ApiError> {
    replay(&read_events(dir)?)
}

pub fn snapshot_bytes(state: &CampaignState) -> Vec<u8> {
    serde_json::to_vec_pretty(state).expect("campaign state serializes")
}

/// Writes `state.json` through a temporary file and rename.
pub fn write_snapshot(dir: &Path, state: &CampaignState) -> Result<(), ApiError> {
    let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
    {
        let mut f = File::create(&tmp).map_err(|e| io("writing snapshot", e))?;
        f.write_all(&snapshot_bytes(state)).map_err(|e| io("writing snapshot", e))?;
        f.sync_all().map_err(|e| io("syncing snapshot", e))?;
    }
    std::fs::rename(&tmp, dir.join(SNAPSHOT_FILE)).map_err(|e| io("publishing snapshot", e))
}

pub fn read_snapshot(dir: &Path) -> Option<Vec<u8>> {
    std::fs::read(dir.join(SNAPSHOT_FILE)).ok()
}
