//! Query-time recollection: scene selection, episode reranking, foresight
//! filtering, and the verify/rewrite loop.

mod steps;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consolidation::SceneSet;
use crate::ids::CellId;
use crate::index::{rrf_fuse, FactIndex, RankedList};
use crate::prompts::{self, schema};
use crate::providers::{ChatRequest, ProviderError, Providers, Stage};
use crate::time::Timestamp;
use crate::types::{Foresight, MemCell, RetrievalConfig, UserProfile, VerifierScope};

pub use steps::{
    filter_foresight, retrieve_once, rewrite_queries, select_episodes, verify_sufficiency, Retrieved,
    SufficiencyVerdict, VERIFIER_UNAVAILABLE,
};
use steps::{docs_for, FirstSeen};

/// Read-only view over one memory space.
#[derive(Clone, Copy)]
pub struct MemoryView<'a> {
    pub cells: &'a BTreeMap<CellId, MemCell>,
    pub scenes: &'a SceneSet,
    pub index: &'a FactIndex,
    pub profile: &'a UserProfile,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Reasoning,
    Chat,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "reasoning" => Ok(Mode::Reasoning),
            "chat" => Ok(Mode::Chat),
            other => Err(format!("unknown mode {other:?} (expected reasoning or chat)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub user_id: String,
    pub text: String,
    pub t_now: Timestamp,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub config: RetrievalConfig,
}

impl Query {
    pub fn new(user_id: impl Into<String>, text: impl Into<String>, t_now: Timestamp) -> Self {
        Query {
            user_id: user_id.into(),
            text: text.into(),
            t_now,
            mode: Mode::Reasoning,
            config: RetrievalConfig::default(),
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_config(mut self, config: RetrievalConfig) -> Self {
        self.config = config;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHit {
    pub cell_id: CellId,
    pub episode: String,
    pub event_time: Timestamp,
    /// Fused retrieval score in the final pool.
    pub score: f64,
    pub rerank_score: f64,
    /// Round in which the cell first entered the candidate pool.
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub queries: Vec<String>,
    pub scenes: Vec<crate::ids::SceneId>,
    /// Cells returned by this round's retrieval.
    pub candidates: usize,
    /// Of those, cells not seen in earlier rounds.
    pub new_candidates: usize,
    /// Size of the cumulative pool handed to the reranker.
    pub pool: usize,
    pub selected: Vec<CellId>,
    /// Episodes shown to the verifier.
    pub verifier_docs: usize,
    pub verdict: SufficiencyVerdict,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    pub t_now: Timestamp,
    pub mode: Mode,
    pub episodes: Vec<EpisodeHit>,
    pub foresight: Vec<Foresight>,
    pub profile_snapshot: Option<UserProfile>,
    pub rounds: Vec<RoundLog>,
    pub final_context: String,
}

impl RetrievalResult {
    fn empty(q: &Query) -> Self {
        RetrievalResult {
            query: q.text.clone(),
            t_now: q.t_now,
            mode: q.mode,
            episodes: Vec::new(),
            foresight: Vec::new(),
            profile_snapshot: None,
            rounds: Vec::new(),
            final_context: String::new(),
        }
    }

    /// The per-query round trace as JSON.
    pub fn round_log_json(&self) -> serde_json::Value {
        serde_json::json!({
            "query": self.query,
            "t_now": self.t_now,
            "rounds": self.rounds,
            "selected": self.episodes.iter().map(|e| &e.cell_id).collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Error)]
pub enum RecollectError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("round {round} failed during {step}: {source}")]
    Provider {
        round: usize,
        step: &'static str,
        #[source]
        source: ProviderError,
        partial: Box<RetrievalResult>,
    },
}

/// Runs the full recollection loop for one query.
pub fn recollect(view: &MemoryView<'_>, providers: &Providers, query: &Query) -> Result<RetrievalResult, RecollectError> {
    if query.text.trim().is_empty() {
        return Err(RecollectError::InvalidQuery("query text must be non-empty".into()));
    }
    let problems = query.config.validate();
    if !problems.is_empty() {
        return Err(RecollectError::InvalidQuery(problems.join("; ")));
    }
    let cfg = &query.config;
    let mut result = RetrievalResult::empty(query);
    let mut first_seen = FirstSeen::default();
    let mut round_lists: Vec<RankedList<CellId>> = Vec::new();
    let mut selected: Vec<(CellId, f64)> = Vec::new();
    let mut queries = vec![query.text.clone()];
    let mut rerank_queries = queries.clone();
    let mut pending_errors: Vec<String> = Vec::new();

    macro_rules! fail {
        ($round:expr, $step:expr, $e:expr, $result:expr) => {
            return Err(RecollectError::Provider {
                round: $round,
                step: $step,
                source: $e,
                partial: Box::new($result),
            })
        };
    }

    for round in 1..=cfg.max_rounds {
        let embeddings = match providers.embed(Stage::Search, &queries) {
            Ok(e) => e,
            Err(e) => fail!(round, "embed", e, result),
        };
        let found = retrieve_once(view, &queries, &embeddings, cfg);
        let fresh = first_seen.note(&found.cells, round);
        let candidates = found.cells.len();
        round_lists.push(found.cells);
        // previously selected cells stay in the pool even if this round missed them
        let pool = if round_lists.len() == 1 { round_lists[0].clone() } else { rrf_fuse(&round_lists, cfg.rrf_k) };
        selected = match select_episodes(view, providers, &pool, &rerank_queries, cfg.episode_top_k) {
            Ok(s) => s,
            Err(e) => fail!(round, "rerank", e, result),
        };
        let shown: Vec<&CellId> = match cfg.verifier_scope {
            VerifierScope::Selected => selected.iter().map(|(c, _)| c).collect(),
            VerifierScope::Pool => pool.ids().collect(),
        };
        let docs = docs_for(view, shown.iter().copied());
        let (verdict, verify_err) = match verify_sufficiency(providers, &query.text, &docs) {
            Ok(v) => v,
            Err(e) => fail!(round, "verify", e, result),
        };
        let mut errors = std::mem::take(&mut pending_errors);
        errors.extend(verify_err);
        result.rounds.push(RoundLog {
            round,
            queries: queries.clone(),
            scenes: found.scenes,
            candidates,
            new_candidates: fresh,
            pool: pool.len(),
            selected: selected.iter().map(|(c, _)| c.clone()).collect(),
            verifier_docs: docs.len(),
            verdict: verdict.clone(),
            errors,
        });
        result.episodes = hits(view, &selected, &pool, &first_seen);
        if verdict.is_sufficient || round == cfg.max_rounds {
            break;
        }
        let (rewritten, rewrite_err) = match rewrite_queries(providers, &query.text, &verdict, &docs) {
            Ok(r) => r,
            Err(e) => fail!(round, "rewrite", e, result),
        };
        pending_errors.extend(rewrite_err);
        rerank_queries = std::iter::once(query.text.clone()).chain(rewritten.iter().cloned()).collect();
        let mut seen = HashSet::new();
        rerank_queries.retain(|q| seen.insert(q.to_lowercase()));
        queries = rewritten;
    }

    let chosen: Vec<&MemCell> = selected.iter().filter_map(|(c, _)| view.cells.get(c)).collect();
    result.foresight = filter_foresight(chosen, query.t_now);
    if query.mode == Mode::Chat {
        result.profile_snapshot = Some(view.profile.clone());
    }
    result.final_context = compose_context(&result);
    Ok(result)
}

fn hits(
    view: &MemoryView<'_>,
    selected: &[(CellId, f64)],
    pool: &RankedList<CellId>,
    first_seen: &FirstSeen,
) -> Vec<EpisodeHit> {
    let fused: std::collections::HashMap<&CellId, f64> = pool.iter().map(|(c, s)| (c, *s)).collect();
    selected
        .iter()
        .filter_map(|(id, rerank)| {
            let cell = view.cells.get(id)?;
            Some(EpisodeHit {
                cell_id: id.clone(),
                episode: cell.episode.clone(),
                event_time: cell.event_time(),
                score: fused.get(id).copied().unwrap_or(0.0),
                rerank_score: *rerank,
                round: first_seen.round_of(id),
            })
        })
        .collect()
}

fn render_foresight(f: &Foresight) -> String {
    match f.valid_until {
        Some(until) => format!(
            "- {} (valid {} to {})",
            f.text,
            f.valid_from.date_string(),
            until.date_string()
        ),
        None => format!("- {} (valid from {}, open-ended)", f.text, f.valid_from.date_string()),
    }
}

fn render_profile(p: &UserProfile) -> String {
    let mut out = String::new();
    for f in &p.explicit_facts {
        let _ = write!(out, "- {}: {} (as of {}", f.key, f.latest.value, f.latest.timestamp.date_string());
        if f.baseline != f.latest {
            let _ = write!(out, "; baseline {} on {}", f.baseline.value, f.baseline.timestamp.date_string());
        }
        if let Some(d) = &f.delta {
            let _ = write!(out, "; change {d}");
        }
        out.push_str(")\n");
    }
    for t in &p.implicit_traits {
        let _ = writeln!(out, "- trait: {}", t.trait_text);
    }
    for c in &p.conflicts {
        let _ = writeln!(
            out,
            "- conflicting {}: {} vs {} ({})",
            c.key,
            c.value_a.value,
            c.value_b.value,
            c.value_a.timestamp.date_string()
        );
    }
    out.trim_end().to_string()
}

/// Renders the answer context: dated episodes in rerank order, then (chat
/// mode only) valid foresight and the user profile when non-empty.
pub fn compose_context(result: &RetrievalResult) -> String {
    let mut out = String::from("Episodes:\n");
    if result.episodes.is_empty() {
        out.push_str("(none)\n");
    }
    for (i, e) in result.episodes.iter().enumerate() {
        let _ = write!(out, "[{}] Date: {}\n{}\n\n", i + 1, e.event_time.date_string(), e.episode.trim());
    }
    if result.mode == Mode::Chat {
        if !result.foresight.is_empty() {
            out.push_str("Valid foresight:\n");
            for f in &result.foresight {
                out.push_str(&render_foresight(f));
                out.push('\n');
            }
            out.push('\n');
        }
        if let Some(p) = result.profile_snapshot.as_ref().filter(|p| !p.is_empty()) {
            out.push_str("User profile:\n");
            out.push_str(&render_profile(p));
            out.push('\n');
        }
    }
    out.trim_end().to_string()
}

/// Asks the chat provider to answer from the composed context.
pub fn answer(providers: &Providers, query: &Query, result: &RetrievalResult) -> Result<String, ProviderError> {
    let prompt = prompts::answer_prompt(&result.final_context, &query.text);
    providers.chat(&ChatRequest::new(prompt, schema::ANSWER, Stage::Answer))
}
