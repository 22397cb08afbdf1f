use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use thiserror::Error;

use super::events::{checksum_line, verify_line};
use super::{EventRecord, IngestError, IngestReport, MemorySpace, ReplayError, SnapshotError, SpaceStats};
use crate::providers::{ProviderError, Providers};
use crate::recollect::{self, Query, RecollectError, RetrievalResult};
use crate::trace::SegmentationStrategy;
use crate::types::{validate_turns, DialogueTurn, MemScene, RetrievalConfig, UserProfile};

const EVENTS_FILE: &str = "events.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.jsonl";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown memory space {0:?}")]
    UnknownSpace(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Recollect(#[from] RecollectError),
    #[error("answer failed: {0}")]
    Answer(#[from] ProviderError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("replaying {path}: {source}")]
    Replay {
        path: PathBuf,
        #[source]
        source: ReplayError,
    },
    #[error("event log {path} line {line}: {message}")]
    EventLog { path: PathBuf, line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

type Space = Arc<RwLock<MemorySpace>>;

/// All memory spaces behind one set of providers.
///
/// Each space has a single writer (ingest holds its write lock) and any
/// number of readers; distinct spaces never block each other.
pub struct Engine {
    providers: Providers,
    config: RetrievalConfig,
    spaces: RwLock<BTreeMap<String, Space>>,
    data_dir: Option<PathBuf>,
}

fn space_dir(root: &Path, user_id: &str) -> PathBuf {
    root.join(hex::encode(user_id.as_bytes()))
}

fn read_event_log(path: &Path) -> Result<Vec<EventRecord>, EngineError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let lines: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, raw) in lines.iter().enumerate() {
        let parsed = verify_line(raw).and_then(|json| serde_json::from_str::<EventRecord>(json).map_err(|e| e.to_string()));
        match parsed {
            Ok(e) => out.push(e),
            // a torn final write is dropped; anything earlier is corruption
            Err(message) if i + 1 == lines.len() => {
                tracing::warn!(path = %path.display(), line = i + 1, %message, "dropping torn final event");
            }
            Err(message) => return Err(EngineError::EventLog { path: path.to_path_buf(), line: i + 1, message }),
        }
    }
    // never surface a cell without its assignment
    while out.last().is_some_and(|e| e.kind == super::EventKind::CellFormed) {
        out.pop();
    }
    Ok(out)
}

impl Engine {
    pub fn new(providers: Providers, config: RetrievalConfig) -> Self {
        Engine { providers, config, spaces: RwLock::new(BTreeMap::new()), data_dir: None }
    }

    /// Opens (or creates) a data directory and restores every space in it
    /// from its snapshot plus any newer logged events.
    pub fn open(providers: Providers, config: RetrievalConfig, dir: &Path) -> Result<Self, EngineError> {
        fs::create_dir_all(dir)?;
        let mut spaces = BTreeMap::new();
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let Some(user_id) = entry
                .file_name()
                .to_str()
                .and_then(|n| hex::decode(n).ok())
                .and_then(|b| String::from_utf8(b).ok())
            else {
                continue;
            };
            let sdir = entry.path();
            let snap = sdir.join(SNAPSHOT_FILE);
            let mut space = if snap.exists() {
                MemorySpace::load_snapshot(&snap)?
            } else {
                MemorySpace::new(user_id.clone(), config.clone())
            };
            let log = sdir.join(EVENTS_FILE);
            for e in read_event_log(&log)? {
                if e.seq > space.last_seq() {
                    space.apply_event(&e).map_err(|source| EngineError::Replay { path: log.clone(), source })?;
                }
            }
            spaces.insert(user_id, Arc::new(RwLock::new(space)));
        }
        Ok(Engine { providers, config, spaces: RwLock::new(spaces), data_dir: Some(dir.to_path_buf()) })
    }

    pub fn providers(&self) -> &Providers {
        &self.providers
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.config
    }

    pub fn user_ids(&self) -> Vec<String> {
        self.spaces.read().expect("space map lock").keys().cloned().collect()
    }

    pub fn space(&self, user_id: &str) -> Option<Space> {
        self.spaces.read().expect("space map lock").get(user_id).cloned()
    }

    fn space_or_err(&self, user_id: &str) -> Result<Space, EngineError> {
        self.space(user_id).ok_or_else(|| EngineError::UnknownSpace(user_id.to_string()))
    }

    fn space_or_create(&self, user_id: &str) -> Space {
        if let Some(s) = self.space(user_id) {
            return s;
        }
        let mut map = self.spaces.write().expect("space map lock");
        map.entry(user_id.to_string())
            .or_insert_with(|| Arc::new(RwLock::new(MemorySpace::new(user_id, self.config.clone()))))
            .clone()
    }

    fn append_events(&self, user_id: &str, events: &[EventRecord]) -> Result<(), EngineError> {
        let Some(root) = &self.data_dir else { return Ok(()) };
        if events.is_empty() {
            return Ok(());
        }
        let dir = space_dir(root, user_id);
        fs::create_dir_all(&dir)?;
        let mut f = OpenOptions::new().create(true).append(true).open(dir.join(EVENTS_FILE))?;
        let mut buf = String::new();
        for e in events {
            buf.push_str(&checksum_line(&serde_json::to_string(e).expect("events serialize")));
            buf.push('\n');
        }
        f.write_all(buf.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    /// Ingests into the user's space, creating it if needed. Events committed
    /// before a failure are still written to the log.
    pub fn ingest(
        &self,
        user_id: &str,
        turns: &[DialogueTurn],
        strategy: &SegmentationStrategy,
    ) -> Result<IngestReport, EngineError> {
        // rejected input must not create a space
        let problems = validate_turns(turns);
        if !problems.is_empty() {
            return Err(IngestError::InvalidTurns(problems).into());
        }
        let space = self.space_or_create(user_id);
        let mut guard = space.write().expect("space lock");
        let before = guard.last_seq();
        let result = guard.ingest(turns, strategy, &self.providers);
        let fresh: Vec<EventRecord> = guard.events().iter().filter(|e| e.seq > before).cloned().collect();
        drop(guard);
        self.append_events(user_id, &fresh)?;
        Ok(result?)
    }

    pub fn search(&self, query: &Query) -> Result<RetrievalResult, EngineError> {
        let space = self.space_or_err(&query.user_id)?;
        let guard = space.read().expect("space lock");
        Ok(guard.recollect(&self.providers, query)?)
    }

    pub fn answer(&self, query: &Query) -> Result<(String, RetrievalResult), EngineError> {
        let result = self.search(query)?;
        let answer = recollect::answer(&self.providers, query, &result)?;
        Ok((answer, result))
    }

    pub fn profile(&self, user_id: &str) -> Result<UserProfile, EngineError> {
        Ok(self.space_or_err(user_id)?.read().expect("space lock").profile().clone())
    }

    pub fn scenes(&self, user_id: &str) -> Result<Vec<MemScene>, EngineError> {
        Ok(self.space_or_err(user_id)?.read().expect("space lock").scenes().to_vec())
    }

    pub fn stats(&self, user_id: &str) -> Result<SpaceStats, EngineError> {
        Ok(self.space_or_err(user_id)?.read().expect("space lock").stats())
    }

    /// Writes a snapshot of every space (no-op without a data directory).
    pub fn flush(&self) -> Result<(), EngineError> {
        let Some(root) = &self.data_dir else { return Ok(()) };
        for user_id in self.user_ids() {
            if let Some(space) = self.space(&user_id) {
                let guard = space.read().expect("space lock");
                guard.save_snapshot(&space_dir(root, &user_id).join(SNAPSHOT_FILE))?;
            }
        }
        Ok(())
    }
}
