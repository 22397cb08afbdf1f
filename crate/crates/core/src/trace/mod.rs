//! Episodic trace formation: turn stream → drafts → MemCells.

mod segment;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Deserialize;

pub use segment::{segment_stream, EpisodeDraft, SegmentationStrategy, DEFAULT_WINDOW};

use crate::ids::{CellId, IdGen};
use crate::prompts::{self, schema};
use crate::providers::{ChatRequest, ProviderError, Providers, Stage};
use crate::time::Timestamp;
use crate::types::{AtomicFact, CellMetadata, Foresight, MemCell};
use crate::ids::TurnId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraceError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{stage} failed at turn position {position}: {source}")]
    Provider {
        stage: &'static str,
        position: usize,
        #[source]
        source: ProviderError,
    },
    #[error("empty synthesis")]
    EmptySynthesis,
    #[error("extraction parse error: {message}; raw reply: {raw}")]
    ExtractionParse { message: String, raw: String },
}

/// Asks the chat provider for a third-person narrative of the draft.
pub fn synthesize_episode(draft: &EpisodeDraft, providers: &Providers) -> Result<String, TraceError> {
    if draft.turns.is_empty() {
        return Err(TraceError::Usage("draft has no turns".into()));
    }
    let prompt = prompts::synthesis_prompt(&draft.turns);
    let reply = providers
        .chat(&ChatRequest::new(prompt, schema::SYNTHESIS, Stage::Add))
        .map_err(|source| TraceError::Provider { stage: "synthesis", position: 0, source })?;
    let episode = reply.trim();
    if episode.is_empty() {
        return Err(TraceError::EmptySynthesis);
    }
    Ok(episode.to_string())
}

/// Facts and foresight parsed from an extraction reply, before ids are assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub facts: Vec<String>,
    pub foresight: Vec<(String, Timestamp, Option<Timestamp>)>,
}

#[derive(Deserialize)]
struct RawExtraction {
    #[serde(default)]
    facts: Vec<String>,
    #[serde(default)]
    foresight: Vec<RawForesight>,
}

#[derive(Deserialize)]
struct RawForesight {
    text: String,
    #[serde(default)]
    valid_from: Option<String>,
    #[serde(default)]
    valid_until: Option<String>,
}

/// Strips a surrounding Markdown code fence, if any.
pub(crate) fn strip_fence(raw: &str) -> &str {
    let t = raw.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.trim_start_matches(|c: char| c.is_alphanumeric());
        return rest.trim_end().trim_end_matches("```").trim();
    }
    t
}

fn sanitize_fact(text: &str) -> String {
    text.trim().replace('?', ".")
}

/// Parses `{facts: [..], foresight: [{text, valid_from, valid_until}]}`.
///
/// Missing `valid_from` defaults to `event_time`; inverted or unparseable
/// intervals are dropped with a warning. An empty fact list falls back to the
/// episode itself as the single fact.
pub fn parse_extraction(raw: &str, episode: &str, event_time: Timestamp) -> Result<Extraction, TraceError> {
    let parsed: RawExtraction = serde_json::from_str(strip_fence(raw)).map_err(|e| {
        TraceError::ExtractionParse { message: e.to_string(), raw: raw.to_string() }
    })?;
    let mut facts: Vec<String> = Vec::new();
    for f in parsed.facts {
        let f = f.trim();
        if f.is_empty() {
            continue;
        }
        if f.contains('?') {
            tracing::warn!(fact = f, "dropping interrogative fact");
            continue;
        }
        facts.push(f.to_string());
    }
    if facts.is_empty() {
        facts.push(sanitize_fact(episode));
    }

    let mut foresight = Vec::new();
    for item in parsed.foresight {
        if item.text.trim().is_empty() {
            continue;
        }
        let from = match item.valid_from.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
            None => event_time,
            Some(s) => match Timestamp::parse(s) {
                Ok(t) => t,
                Err(_) => {
                    tracing::warn!(text = %item.text, valid_from = s, "dropping foresight with bad valid_from");
                    continue;
                }
            },
        };
        let until = match item.valid_until.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => match Timestamp::parse(s) {
                Ok(t) => Some(t),
                Err(_) => {
                    tracing::warn!(text = %item.text, valid_until = s, "dropping foresight with bad valid_until");
                    continue;
                }
            },
        };
        if until.is_some_and(|u| from > u) {
            tracing::warn!(text = %item.text, "dropping foresight with valid_from after valid_until");
            continue;
        }
        foresight.push((item.text.trim().to_string(), from, until));
    }
    Ok(Extraction { facts, foresight })
}

fn request_extraction(episode: &str, event_time: Timestamp, providers: &Providers) -> Result<Extraction, TraceError> {
    if episode.trim().is_empty() {
        return Err(TraceError::Usage("episode must be non-empty".into()));
    }
    let prompt = prompts::extraction_prompt(episode, event_time);
    let reply = providers
        .chat(&ChatRequest::new(prompt, schema::EXTRACTION, Stage::Add))
        .map_err(|source| TraceError::Provider { stage: "extraction", position: 0, source })?;
    parse_extraction(&reply, episode, event_time)
}

/// Extracts atomic facts and foresight from an episode, assigning ids under `cell_id`.
pub fn derive_structure(
    episode: &str,
    event_time: Timestamp,
    cell_id: &CellId,
    ids: &mut IdGen,
    providers: &Providers,
) -> Result<(Vec<AtomicFact>, Vec<Foresight>), TraceError> {
    let ex = request_extraction(episode, event_time, providers)?;
    Ok(assign_structure(ex, cell_id, ids))
}

fn assign_structure(ex: Extraction, cell_id: &CellId, ids: &mut IdGen) -> (Vec<AtomicFact>, Vec<Foresight>) {
    let facts = ex
        .facts
        .into_iter()
        .map(|text| AtomicFact { fact_id: ids.next_fact(), text, source_cell: cell_id.clone() })
        .collect();
    let foresight = ex
        .foresight
        .into_iter()
        .map(|(text, valid_from, valid_until)| Foresight {
            foresight_id: ids.next_foresight(),
            text,
            valid_from,
            valid_until,
            source_cell: cell_id.clone(),
        })
        .collect();
    (facts, foresight)
}

/// Provider outputs for one draft; ids are assigned later so drafts can be processed in parallel.
#[derive(Debug, Clone, PartialEq)]
pub struct CellBlueprint {
    pub episode: String,
    pub extraction: Extraction,
    pub embedding: Vec<f32>,
    /// One vector per extracted fact, in fact order.
    pub fact_embeddings: Vec<Vec<f32>>,
    pub event_time: Timestamp,
    pub source_turn_ids: Vec<TurnId>,
}

/// Error from forming one cell, tagged with the turn span of its draft.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("cell formation failed for turns {first_turn}..={last_turn}: {source}")]
pub struct FormationError {
    pub first_turn: TurnId,
    pub last_turn: TurnId,
    #[source]
    pub source: TraceError,
}

pub fn blueprint(draft: &EpisodeDraft, providers: &Providers) -> Result<CellBlueprint, FormationError> {
    let wrap = |source: TraceError| FormationError {
        first_turn: draft.turns.first().map(|t| t.turn_id.clone()).unwrap_or_else(|| TurnId::from("")),
        last_turn: draft.turns.last().map(|t| t.turn_id.clone()).unwrap_or_else(|| TurnId::from("")),
        source,
    };
    let last = draft.turns.last().ok_or_else(|| wrap(TraceError::Usage("draft has no turns".into())))?;
    let event_time = last.timestamp;
    let episode = synthesize_episode(draft, providers).map_err(wrap)?;
    let extraction = request_extraction(&episode, event_time, providers).map_err(wrap)?;
    let embedding = providers.embed_one(Stage::Add, &episode).map_err(|source| {
        wrap(TraceError::Provider { stage: "embedding", position: 0, source })
    })?;
    let fact_embeddings = providers.embed(Stage::Add, &extraction.facts).map_err(|source| {
        wrap(TraceError::Provider { stage: "fact embedding", position: 0, source })
    })?;
    Ok(CellBlueprint {
        episode,
        extraction,
        embedding,
        fact_embeddings,
        event_time,
        source_turn_ids: draft.turns.iter().map(|t| t.turn_id.clone()).collect(),
    })
}

pub fn assemble(bp: CellBlueprint, user_id: &str, ids: &mut IdGen) -> MemCell {
    let cell_id = ids.next_cell();
    let (facts, foresight) = assign_structure(bp.extraction, &cell_id, ids);
    MemCell {
        cell_id,
        episode: bp.episode,
        facts,
        foresight,
        metadata: CellMetadata {
            event_time: bp.event_time,
            source_turn_ids: bp.source_turn_ids,
            user_id: user_id.to_string(),
            extra: BTreeMap::new(),
        },
        embedding: bp.embedding,
    }
}

/// Synthesis, extraction, and embedding composed into one cell.
pub fn form_memcell(
    draft: &EpisodeDraft,
    user_id: &str,
    ids: &mut IdGen,
    providers: &Providers,
) -> Result<MemCell, FormationError> {
    Ok(assemble(blueprint(draft, providers)?, user_id, ids))
}

/// Runs [`blueprint`] over drafts in parallel; results keep draft order.
pub fn blueprints(drafts: &[EpisodeDraft], providers: &Providers) -> Vec<Result<CellBlueprint, FormationError>> {
    drafts.par_iter().map(|d| blueprint(d, providers)).collect()
}
