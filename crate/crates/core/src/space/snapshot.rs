use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::events::{checksum_line, verify_line, EventRecord, TurnIngested};
use super::{EventKind, MemorySpace};
use crate::consolidation::SceneSet;
use crate::ids::{CellId, IdGen};
use crate::index::FactIndex;
use crate::types::{MemCell, MemScene, RetrievalConfig, UserProfile};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot schema version {found} is not supported (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("snapshot integrity error at line {line}: {message}")]
    Integrity { line: usize, message: String },
    #[error("snapshot is inconsistent: {0}")]
    Inconsistent(String),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header {
        schema_version: u32,
        user_id: String,
        config: RetrievalConfig,
        ids: IdGen,
        turn_count: usize,
    },
    Cell {
        cell: MemCell,
        fact_embeddings: Vec<Vec<f32>>,
    },
    Scene {
        scene: MemScene,
    },
    Profile {
        profile: UserProfile,
    },
    Event {
        event: EventRecord,
    },
    End {
        lines: usize,
    },
}

fn encode(line: &Line) -> String {
    checksum_line(&serde_json::to_string(line).expect("snapshot lines serialize"))
}

impl MemorySpace {
    /// Canonical encoding: one checksummed JSON line per record, closed by
    /// an `end` line holding the record count.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let mut lines = vec![encode(&Line::Header {
            schema_version: SCHEMA_VERSION,
            user_id: self.user_id.clone(),
            config: self.config.clone(),
            ids: self.ids.clone(),
            turn_count: self.turn_count,
        })];
        for (id, cell) in &self.cells {
            lines.push(encode(&Line::Cell {
                cell: cell.clone(),
                fact_embeddings: self.fact_embeddings.get(id).cloned().unwrap_or_default(),
            }));
        }
        for scene in self.scenes.scenes() {
            lines.push(encode(&Line::Scene { scene: scene.clone() }));
        }
        lines.push(encode(&Line::Profile { profile: self.profile.clone() }));
        for event in &self.events {
            lines.push(encode(&Line::Event { event: event.clone() }));
        }
        let n = lines.len();
        lines.push(encode(&Line::End { lines: n }));
        let mut out = lines.join("\n").into_bytes();
        out.push(b'\n');
        out
    }

    /// Writes the snapshot atomically (temp file + rename).
    pub fn save_snapshot(&self, path: &Path) -> Result<(), SnapshotError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.snapshot_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load_snapshot(path: &Path) -> Result<Self, SnapshotError> {
        Self::from_snapshot_bytes(&fs::read(path)?)
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let text = std::str::from_utf8(bytes).map_err(|e| SnapshotError::Integrity {
            line: 0,
            message: format!("not utf-8: {e}"),
        })?;
        let mut header = None;
        let mut cells = BTreeMap::new();
        let mut fact_embeddings = BTreeMap::new();
        let mut scenes = Vec::new();
        let mut profile = None;
        let mut events = Vec::new();
        let mut ended = false;
        let mut count = 0;
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let bad = |message: String| SnapshotError::Integrity { line: lineno, message };
            if ended {
                return Err(bad("data after end marker".into()));
            }
            let json = verify_line(raw).map_err(bad)?;
            let line: Line = serde_json::from_str(json).map_err(|e| bad(e.to_string()))?;
            if i == 0 {
                match &line {
                    Line::Header { schema_version, .. } if *schema_version != SCHEMA_VERSION => {
                        return Err(SnapshotError::Version { found: *schema_version, expected: SCHEMA_VERSION });
                    }
                    Line::Header { .. } => {}
                    _ => return Err(bad("first line must be the header".into())),
                }
            }
            match line {
                Line::Header { user_id, config, ids, turn_count, .. } => {
                    if header.is_some() {
                        return Err(bad("duplicate header".into()));
                    }
                    header = Some((user_id, config, ids, turn_count));
                }
                Line::Cell { cell, fact_embeddings: embs } => {
                    fact_embeddings.insert(cell.cell_id.clone(), embs);
                    cells.insert(cell.cell_id.clone(), cell);
                }
                Line::Scene { scene } => scenes.push(scene),
                Line::Profile { profile: p } => profile = Some(p),
                Line::Event { event } => events.push(event),
                Line::End { lines } => {
                    if lines != count {
                        return Err(bad(format!("end marker counts {lines} lines, found {count}")));
                    }
                    ended = true;
                }
            }
            count += 1;
        }
        if !ended {
            return Err(SnapshotError::Integrity {
                line: count + 1,
                message: "missing end marker (truncated file)".into(),
            });
        }
        let (user_id, config, ids, turn_count) =
            header.ok_or_else(|| SnapshotError::Inconsistent("no header".into()))?;
        let profile = profile.ok_or_else(|| SnapshotError::Inconsistent("no profile".into()))?;

        let by_id: HashMap<CellId, &MemCell> = cells.iter().map(|(k, v)| (k.clone(), v)).collect();
        let scene_set =
            SceneSet::from_scenes(scenes, &by_id).map_err(|e| SnapshotError::Inconsistent(e.to_string()))?;
        let mut index = FactIndex::default();
        for (id, cell) in &cells {
            let scene = scene_set.scene_of(id).cloned();
            let embs = fact_embeddings.get(id).map(Vec::as_slice).unwrap_or(&[]);
            index
                .insert_cell(cell, scene.as_ref(), embs)
                .map_err(|e| SnapshotError::Inconsistent(e.to_string()))?;
        }
        let mut turns_seen = std::collections::HashSet::new();
        for e in events.iter().filter(|e| e.kind == EventKind::TurnIngested) {
            if let Ok(t) = serde_json::from_value::<TurnIngested>(e.payload.clone()) {
                turns_seen.insert(t.turn.turn_id);
            }
        }
        let space = MemorySpace {
            user_id,
            config,
            cells,
            fact_embeddings,
            scenes: scene_set,
            profile,
            index,
            ids,
            turns_seen,
            turn_count,
            events,
        };
        let problems = space.check_invariants();
        if !problems.is_empty() {
            return Err(SnapshotError::Inconsistent(problems.join("; ")));
        }
        Ok(space)
    }
}
