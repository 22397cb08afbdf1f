//! One user's memory: cells, scenes, profile, indexes, and the event log
//! that can rebuild them.

mod engine;
mod events;
mod snapshot;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consolidation::{
    apply_assignment, assign_to_scene, merge_profile, update_profile, update_scene_summary, ConsolidationError,
    SceneSet, SceneTarget,
};
use crate::ids::{CellId, IdGen, SceneId, TurnId};
use crate::index::{FactIndex, IndexError};
use crate::providers::{ProviderUsage, Providers};
use crate::recollect::{self, MemoryView, Query, RecollectError, RetrievalResult};
use crate::time::Timestamp;
use crate::trace::{assemble, blueprints, segment_stream, FormationError, SegmentationStrategy, TraceError};
use crate::types::{validate_turns, DialogueTurn, MemCell, MemScene, RetrievalConfig, UserProfile};

pub use engine::{Engine, EngineError};
pub use events::{
    checksum_line, verify_line, CellFormed, EventKind, EventRecord, ProfileUpdated, SceneAssigned, TurnIngested,
};
pub use snapshot::{SnapshotError, SCHEMA_VERSION};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub turns_ingested: usize,
    /// Turns whose id was already present; they are ingested again, not skipped.
    pub repeated_turns: usize,
    pub episodes: usize,
    pub cells_formed: usize,
    pub scenes_created: usize,
    pub scenes_updated: usize,
    pub cell_ids: Vec<CellId>,
    /// Provider usage incurred by this call, per stage.
    pub provider_usage: Vec<ProviderUsage>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid turns: {}", .0.join("; "))]
    InvalidTurns(Vec<String>),
    #[error("segmentation failed at turn {turn}: {source}")]
    Segmentation {
        turn: TurnId,
        #[source]
        source: TraceError,
        report: Box<IngestReport>,
    },
    #[error("{source}")]
    Formation {
        #[source]
        source: FormationError,
        report: Box<IngestReport>,
    },
    #[error("could not store cell for turns {first_turn}..={last_turn}: {message}")]
    Store {
        first_turn: TurnId,
        last_turn: TurnId,
        message: String,
        report: Box<IngestReport>,
    },
}

impl IngestError {
    /// What was committed before the failure.
    pub fn report(&self) -> Option<&IngestReport> {
        match self {
            IngestError::InvalidTurns(_) => None,
            IngestError::Segmentation { report, .. }
            | IngestError::Formation { report, .. }
            | IngestError::Store { report, .. } => Some(report),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("event {seq}: bad payload: {message}")]
    Payload { seq: u64, message: String },
    #[error("event {seq}: sequence numbers must increase (previous {prev})")]
    Sequence { seq: u64, prev: u64 },
    #[error("event {seq}: {message}")]
    Divergence { seq: u64, message: String },
    #[error("event {seq}: {source}")]
    Consolidation {
        seq: u64,
        #[source]
        source: ConsolidationError,
    },
    #[error("event {seq}: {source}")]
    Index {
        seq: u64,
        #[source]
        source: IndexError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceStats {
    pub user_id: String,
    pub turns: usize,
    pub cells: usize,
    pub scenes: usize,
    pub facts: usize,
    pub foresight: usize,
    pub avg_cells_per_scene: f64,
    pub explicit_profile_facts: usize,
    pub implicit_traits: usize,
    pub events: usize,
}

#[derive(Debug, Clone)]
pub struct MemorySpace {
    user_id: String,
    config: RetrievalConfig,
    cells: BTreeMap<CellId, MemCell>,
    fact_embeddings: BTreeMap<CellId, Vec<Vec<f32>>>,
    scenes: SceneSet,
    profile: UserProfile,
    index: FactIndex,
    ids: IdGen,
    turns_seen: HashSet<TurnId>,
    turn_count: usize,
    events: Vec<EventRecord>,
}

impl PartialEq for MemorySpace {
    fn eq(&self, other: &Self) -> bool {
        self.user_id == other.user_id
            && self.config == other.config
            && self.cells == other.cells
            && self.fact_embeddings == other.fact_embeddings
            && self.scenes == other.scenes
            && self.profile == other.profile
            && self.ids == other.ids
            && self.turn_count == other.turn_count
            && self.index.bm25.docs() == other.index.bm25.docs()
            && self.index.dense == other.index.dense
    }
}

fn usage_delta(before: &[ProviderUsage], after: &[ProviderUsage]) -> Vec<ProviderUsage> {
    after
        .iter()
        .map(|a| {
            let b = before.iter().find(|b| b.stage_label == a.stage_label);
            ProviderUsage {
                stage_label: a.stage_label.clone(),
                calls: a.calls - b.map_or(0, |b| b.calls),
                prompt_tokens: a.prompt_tokens - b.map_or(0, |b| b.prompt_tokens),
                total_tokens: a.total_tokens - b.map_or(0, |b| b.total_tokens),
            }
        })
        .collect()
}

impl MemorySpace {
    pub fn new(user_id: impl Into<String>, config: RetrievalConfig) -> Self {
        let user_id = user_id.into();
        MemorySpace {
            profile: UserProfile::new(user_id.clone()),
            user_id,
            config,
            cells: BTreeMap::new(),
            fact_embeddings: BTreeMap::new(),
            scenes: SceneSet::new(),
            index: FactIndex::default(),
            ids: IdGen::default(),
            turns_seen: HashSet::new(),
            turn_count: 0,
            events: Vec::new(),
        }
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.config
    }

    pub fn cells(&self) -> &BTreeMap<CellId, MemCell> {
        &self.cells
    }

    pub fn scenes(&self) -> &[MemScene] {
        self.scenes.scenes()
    }

    pub fn scene_set(&self) -> &SceneSet {
        &self.scenes
    }

    pub fn profile(&self) -> &UserProfile {
        &self.profile
    }

    pub fn index(&self) -> &FactIndex {
        &self.index
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }

    pub fn view(&self) -> MemoryView<'_> {
        MemoryView { cells: &self.cells, scenes: &self.scenes, index: &self.index, profile: &self.profile }
    }

    pub fn stats(&self) -> SpaceStats {
        let facts = self.cells.values().map(|c| c.facts.len()).sum();
        let foresight = self.cells.values().map(|c| c.foresight.len()).sum();
        SpaceStats {
            user_id: self.user_id.clone(),
            turns: self.turn_count,
            cells: self.cells.len(),
            scenes: self.scenes.len(),
            facts,
            foresight,
            avg_cells_per_scene: if self.scenes.is_empty() {
                0.0
            } else {
                self.cells.len() as f64 / self.scenes.len() as f64
            },
            explicit_profile_facts: self.profile.explicit_facts.len(),
            implicit_traits: self.profile.implicit_traits.len(),
            events: self.events.len(),
        }
    }

    /// Checks the structural invariants; returns human-readable violations.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut covered: HashMap<&CellId, usize> = HashMap::new();
        for s in self.scenes.scenes() {
            for m in &s.member_ids {
                *covered.entry(m).or_default() += 1;
                if !self.cells.contains_key(m) {
                    out.push(format!("{} lists unknown cell {m}", s.scene_id));
                }
            }
        }
        for id in self.cells.keys() {
            match covered.get(id) {
                Some(1) => {}
                Some(n) => out.push(format!("{id} belongs to {n} scenes")),
                None => out.push(format!("{id} belongs to no scene")),
            }
        }
        let facts: usize = self.cells.values().map(|c| c.facts.len()).sum();
        if facts != self.index.len() || facts != self.index.dense.len() || facts != self.index.bm25.len() {
            out.push(format!("index covers {} facts, cells hold {facts}", self.index.len()));
        }
        for c in self.cells.values() {
            for f in &c.facts {
                if self.index.cell_of(&f.fact_id) != Some(&c.cell_id) {
                    out.push(format!("fact {} of {} is not indexed", f.fact_id, c.cell_id));
                }
            }
        }
        out
    }

    fn push_event<T: Serialize>(&mut self, kind: EventKind, payload: &T) {
        let seq = self.last_seq() + 1;
        self.events.push(EventRecord { seq, kind, payload: events::to_value(payload), wall_time: Timestamp::now() });
    }

    /// Segments, forms cells, and consolidates each into the scene set.
    ///
    /// Cells are committed one at a time; a failure keeps everything committed
    /// before it. Re-ingesting the same turns forms new cells (no dedup).
    pub fn ingest(
        &mut self,
        turns: &[DialogueTurn],
        strategy: &SegmentationStrategy,
        providers: &Providers,
    ) -> Result<IngestReport, IngestError> {
        let usage_before = providers.usage.snapshot();
        let mut report = IngestReport::default();
        if turns.is_empty() {
            report.provider_usage = usage_delta(&usage_before, &providers.usage.snapshot());
            return Ok(report);
        }
        let problems = validate_turns(turns);
        if !problems.is_empty() {
            return Err(IngestError::InvalidTurns(problems));
        }
        let drafts = match segment_stream(turns, strategy, providers) {
            Ok(d) => d,
            Err(source) => {
                let pos = match &source {
                    TraceError::Provider { position, .. } => (*position).min(turns.len() - 1),
                    _ => 0,
                };
                return Err(IngestError::Segmentation {
                    turn: turns[pos].turn_id.clone(),
                    source,
                    report: Box::new(report),
                });
            }
        };
        for t in turns {
            if !self.turns_seen.insert(t.turn_id.clone()) {
                report.repeated_turns += 1;
            }
            self.push_event(EventKind::TurnIngested, &TurnIngested { turn: t.clone() });
        }
        if report.repeated_turns > 0 {
            tracing::info!(user = %self.user_id, repeated = report.repeated_turns, "re-ingesting known turns; no dedup");
        }
        self.turn_count += turns.len();
        report.turns_ingested = turns.len();
        report.episodes = drafts.len();

        let mut touched: HashSet<SceneId> = HashSet::new();
        let mut created: HashSet<SceneId> = HashSet::new();
        for (draft, bp) in drafts.iter().zip(blueprints(&drafts, providers)) {
            let mut bp = match bp {
                Ok(bp) => bp,
                Err(source) => {
                    report.scenes_updated = touched.difference(&created).count();
                    report.provider_usage = usage_delta(&usage_before, &providers.usage.snapshot());
                    return Err(IngestError::Formation { source, report: Box::new(report) });
                }
            };
            let fact_embeddings = std::mem::take(&mut bp.fact_embeddings);
            let cell = assemble(bp, &self.user_id, &mut self.ids);
            match self.commit_cell(cell, fact_embeddings, providers) {
                Ok((cell_id, scene_id, is_new)) => {
                    report.cells_formed += 1;
                    report.cell_ids.push(cell_id);
                    if is_new {
                        created.insert(scene_id.clone());
                    }
                    touched.insert(scene_id);
                }
                Err(message) => {
                    report.scenes_created = created.len();
                    report.scenes_updated = touched.difference(&created).count();
                    report.provider_usage = usage_delta(&usage_before, &providers.usage.snapshot());
                    return Err(IngestError::Store {
                        first_turn: draft.turns[0].turn_id.clone(),
                        last_turn: draft.turns[draft.turns.len() - 1].turn_id.clone(),
                        message,
                        report: Box::new(report),
                    });
                }
            }
        }
        report.scenes_created = created.len();
        report.scenes_updated = touched.difference(&created).count();
        report.provider_usage = usage_delta(&usage_before, &providers.usage.snapshot());
        Ok(report)
    }

    /// Assigns, indexes, summarizes, and updates the profile for one cell;
    /// events are appended only once the cell is fully in place.
    fn commit_cell(
        &mut self,
        cell: MemCell,
        fact_embeddings: Vec<Vec<f32>>,
        providers: &Providers,
    ) -> Result<(CellId, SceneId, bool), String> {
        let decision = assign_to_scene(&cell, &self.scenes, &self.config.consolidation());
        let is_new = decision.target == SceneTarget::New;
        let scene_id = match &decision.target {
            SceneTarget::Existing(id) => id.clone(),
            SceneTarget::New => self.ids.next_scene(),
        };
        self.index.insert_cell(&cell, Some(&scene_id), &fact_embeddings).map_err(|e| e.to_string())?;
        apply_assignment(&decision, &cell, &mut self.scenes, &mut self.ids, Some(scene_id.clone()))
            .map_err(|e| e.to_string())?;
        let cell_id = cell.cell_id.clone();
        self.cells.insert(cell_id.clone(), cell.clone());
        self.fact_embeddings.insert(cell_id.clone(), fact_embeddings.clone());

        let scene = self.scenes.get(&scene_id).expect("just assigned").clone();
        let episodes: Vec<&str> = scene.member_ids.iter().filter_map(|m| self.cells.get(m)).map(|c| c.episode.as_str()).collect();
        let summary = update_scene_summary(&scene, &episodes, providers);
        self.scenes.set_summary(&scene_id, summary.clone()).map_err(|e| e.to_string())?;

        let scene = self.scenes.get(&scene_id).expect("just assigned").clone();
        let profile_update = match update_profile(&self.profile, &scene, std::slice::from_ref(&summary), providers) {
            Ok((profile, extraction)) => Some(ProfileUpdated {
                scene_id: scene_id.clone(),
                extraction,
                default_time: scene.latest_event,
                profile,
            }),
            Err(e) => {
                tracing::warn!(user = %self.user_id, scene = %scene_id, error = %e, "profile update skipped");
                None
            }
        };

        self.push_event(EventKind::CellFormed, &CellFormed { cell, fact_embeddings });
        self.push_event(EventKind::SceneAssigned, &SceneAssigned { decision, scene_id: scene_id.clone(), summary });
        if let Some(update) = profile_update {
            self.profile = update.profile.clone();
            self.push_event(EventKind::ProfileUpdated, &update);
        }
        Ok((cell_id, scene_id, is_new))
    }

    /// Rebuilds a space from its event log without calling any provider.
    ///
    /// Each logged assignment is recomputed and must match, so the replay also
    /// re-checks the similarity threshold and time-gap rule.
    pub fn replay(user_id: &str, config: RetrievalConfig, events: &[EventRecord]) -> Result<Self, ReplayError> {
        let mut space = MemorySpace::new(user_id, config);
        for e in events {
            space.apply_event(e)?;
        }
        Ok(space)
    }

    pub(crate) fn apply_event(&mut self, e: &EventRecord) -> Result<(), ReplayError> {
        let seq = e.seq;
        if seq <= self.last_seq() {
            return Err(ReplayError::Sequence { seq, prev: self.last_seq() });
        }
        fn parse<T: serde::de::DeserializeOwned>(e: &EventRecord) -> Result<T, ReplayError> {
            serde_json::from_value(e.payload.clone()).map_err(|err| ReplayError::Payload { seq: e.seq, message: err.to_string() })
        }
        let diverge = |message: String| ReplayError::Divergence { seq, message };
        match e.kind {
            EventKind::TurnIngested => {
                let p: TurnIngested = parse(e)?;
                self.turns_seen.insert(p.turn.turn_id);
                self.turn_count += 1;
            }
            EventKind::CellFormed => {
                let p: CellFormed = parse(e)?;
                self.ids.observe(p.cell.cell_id.as_str());
                for f in &p.cell.facts {
                    self.ids.observe(f.fact_id.as_str());
                }
                for f in &p.cell.foresight {
                    self.ids.observe(f.foresight_id.as_str());
                }
                if self.cells.contains_key(&p.cell.cell_id) {
                    return Err(diverge(format!("{} formed twice", p.cell.cell_id)));
                }
                self.fact_embeddings.insert(p.cell.cell_id.clone(), p.fact_embeddings);
                self.cells.insert(p.cell.cell_id.clone(), p.cell);
            }
            EventKind::SceneAssigned => {
                let p: SceneAssigned = parse(e)?;
                let cell = self
                    .cells
                    .get(&p.decision.cell_id)
                    .ok_or_else(|| diverge(format!("assignment for unknown cell {}", p.decision.cell_id)))?
                    .clone();
                let recomputed = assign_to_scene(&cell, &self.scenes, &self.config.consolidation());
                if recomputed != p.decision {
                    return Err(diverge(format!(
                        "assignment of {} differs on replay: logged {:?}, recomputed {:?}",
                        cell.cell_id, p.decision.target, recomputed.target
                    )));
                }
                let embs = self.fact_embeddings.get(&cell.cell_id).cloned().unwrap_or_default();
                self.index
                    .insert_cell(&cell, Some(&p.scene_id), &embs)
                    .map_err(|source| ReplayError::Index { seq, source })?;
                let got = apply_assignment(&p.decision, &cell, &mut self.scenes, &mut self.ids, Some(p.scene_id.clone()))
                    .map_err(|source| ReplayError::Consolidation { seq, source })?;
                if got != p.scene_id {
                    return Err(diverge(format!("cell landed in {got}, log says {}", p.scene_id)));
                }
                self.scenes
                    .set_summary(&p.scene_id, p.summary)
                    .map_err(|source| ReplayError::Consolidation { seq, source })?;
            }
            EventKind::ProfileUpdated => {
                let p: ProfileUpdated = parse(e)?;
                let merged = merge_profile(&self.profile, &p.extraction, &p.scene_id, p.default_time);
                if merged != p.profile {
                    return Err(diverge("profile merge differs on replay".into()));
                }
                self.profile = merged;
            }
        }
        self.events.push(e.clone());
        Ok(())
    }

    pub fn recollect(&self, providers: &Providers, query: &Query) -> Result<RetrievalResult, RecollectError> {
        recollect::recollect(&self.view(), providers, query)
    }
}
