use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{DsisError, RatingRecord, SessionPlan};

pub const SESSIONS_FILE: &str = "sessions.jsonl";
pub const RATINGS_FILE: &str = "ratings.jsonl";

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Starts at `start` and advances by `step` on every reading.
#[derive(Debug)]
pub struct FixedStepClock {
    next: AtomicU64,
    step: u64,
}

impl FixedStepClock {
    pub fn new(start: u64, step: u64) -> Self {
        Self { next: AtomicU64::new(start), step }
    }
}

impl Clock for FixedStepClock {
    fn now_ms(&self) -> u64 {
        self.next.fetch_add(self.step, Ordering::SeqCst)
    }
}

/// Append-only log of session plans and ratings. With a directory, every
/// accepted entry is written as one JSON line and flushed before it becomes
/// visible; nothing is ever rewritten.
#[derive(Debug, Default)]
pub struct RatingStore {
    dir: Option<PathBuf>,
    sessions: Vec<SessionPlan>,
    records: Vec<RatingRecord>,
    rated: HashSet<(String, String)>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DsisError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DsisError::Corrupt {
            file: name.clone(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn append_line<T: Serialize>(path: &Path, value: &T) -> Result<(), DsisError> {
    let mut line = serde_json::to_string(value).expect("plain data serializes");
    line.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(line.as_bytes())?;
    f.sync_data()?;
    Ok(())
}

impl RatingStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a store directory and replays its logs.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, DsisError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let sessions: Vec<SessionPlan> = read_jsonl(&dir.join(SESSIONS_FILE))?;
        let records: Vec<RatingRecord> = read_jsonl(&dir.join(RATINGS_FILE))?;
        let mut store = Self { dir: Some(dir.to_path_buf()), sessions, records: Vec::new(), rated: HashSet::new() };
        for (i, r) in records.into_iter().enumerate() {
            let key = (r.session_id.clone(), r.stimulus_id.clone());
            if !store.rated.insert(key) {
                return Err(DsisError::Corrupt {
                    file: dir.join(RATINGS_FILE).display().to_string(),
                    line: i + 1,
                    message: format!("duplicate rating of {} in {}", r.stimulus_id, r.session_id),
                });
            }
            store.records.push(r);
        }
        Ok(store)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn sessions(&self) -> &[SessionPlan] {
        &self.sessions
    }

    pub fn records(&self) -> &[RatingRecord] {
        &self.records
    }

    pub fn is_rated(&self, session_id: &str, stimulus_id: &str) -> bool {
        self.rated.contains(&(session_id.to_string(), stimulus_id.to_string()))
    }

    pub fn append_session(&mut self, plan: SessionPlan) -> Result<(), DsisError> {
        if let Some(dir) = &self.dir {
            append_line(&dir.join(SESSIONS_FILE), &plan)?;
        }
        self.sessions.push(plan);
        Ok(())
    }

    pub fn append_rating(&mut self, record: RatingRecord) -> Result<(), DsisError> {
        let key = (record.session_id.clone(), record.stimulus_id.clone());
        if self.rated.contains(&key) {
            return Err(DsisError::Duplicate { session: key.0, stimulus: key.1 });
        }
        if let Some(dir) = &self.dir {
            append_line(&dir.join(RATINGS_FILE), &record)?;
        }
        self.rated.insert(key);
        self.records.push(record);
        Ok(())
    }
}
