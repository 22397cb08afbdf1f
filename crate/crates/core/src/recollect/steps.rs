use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MemoryView;
use crate::ids::{CellId, SceneId};
use crate::index::{fact_to_cell_scores, rrf_fuse, scene_scores, RankedList};
use crate::prompts::{self, schema, JSON_ONLY_SUFFIX};
use crate::providers::{ChatRequest, ProviderError, Providers, Stage};
use crate::time::Timestamp;
use crate::trace::strip_fence;
use crate::types::{foresight_is_valid, Foresight, MemCell, RetrievalConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SufficiencyVerdict {
    pub is_sufficient: bool,
    pub reasoning: String,
    #[serde(default)]
    pub key_information_found: Vec<String>,
    #[serde(default)]
    pub missing_information: Vec<String>,
}

pub const VERIFIER_UNAVAILABLE: &str = "verifier unavailable";

impl SufficiencyVerdict {
    pub fn fail_open() -> Self {
        SufficiencyVerdict {
            is_sufficient: true,
            reasoning: VERIFIER_UNAVAILABLE.to_string(),
            key_information_found: Vec::new(),
            missing_information: Vec::new(),
        }
    }
}

/// Output of one retrieval pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Retrieved {
    /// Cells of the selected scenes, best first.
    pub cells: RankedList<CellId>,
    pub scenes: Vec<SceneId>,
}

/// Hybrid fact search per query, lifted to cells, fused across queries,
/// lifted to scenes; keeps the cells of the top scenes.
pub fn retrieve_once(
    view: &MemoryView<'_>,
    queries: &[String],
    embeddings: &[Vec<f32>],
    cfg: &RetrievalConfig,
) -> Retrieved {
    let per_query: Vec<RankedList<CellId>> = queries
        .par_iter()
        .zip(embeddings.par_iter())
        .map(|(q, e)| {
            let facts = view.index.hybrid(q, e, cfg.fact_candidates, cfg.rrf_k);
            fact_to_cell_scores(&facts, view.index.fact_cells())
        })
        .collect();
    let merged = match per_query.len() {
        0 => RankedList::default(),
        1 => per_query.into_iter().next().unwrap_or_default(),
        _ => rrf_fuse(&per_query, cfg.rrf_k),
    };
    let scenes: Vec<SceneId> = scene_scores(&merged, |c| view.scenes.scene_of(c).cloned())
        .truncate(cfg.scene_top_n)
        .ids()
        .cloned()
        .collect();
    let chosen: HashSet<&SceneId> = scenes.iter().collect();
    let cells = merged
        .into_entries()
        .into_iter()
        .filter(|(c, _)| view.scenes.scene_of(c).is_some_and(|s| chosen.contains(s)))
        .collect();
    Retrieved {
        cells: RankedList::from_sorted(cells).expect("filtering keeps order"),
        scenes,
    }
}

/// Reranks candidate episodes and keeps the best `k`.
///
/// With several queries a candidate's score is its best score over them.
/// Ties keep the fused order of `candidates`.
pub fn select_episodes(
    view: &MemoryView<'_>,
    providers: &Providers,
    candidates: &RankedList<CellId>,
    queries: &[String],
    k: usize,
) -> Result<Vec<(CellId, f64)>, ProviderError> {
    let cells: Vec<&MemCell> = candidates.ids().filter_map(|c| view.cells.get(c)).collect();
    if cells.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = cells.iter().map(|c| c.episode.clone()).collect();
    let mut best = vec![f64::NEG_INFINITY; texts.len()];
    for q in queries {
        for (i, s) in providers.rerank(Stage::Search, q, &texts)? {
            if let Some(slot) = best.get_mut(i) {
                *slot = slot.max(s);
            }
        }
    }
    let mut order: Vec<(usize, f64)> = best.into_iter().enumerate().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(order.into_iter().take(k).map(|(i, s)| (cells[i].cell_id.clone(), s)).collect())
}

/// Time-valid foresight of the given cells, soonest-expiring first.
pub fn filter_foresight<'a>(cells: impl IntoIterator<Item = &'a MemCell>, t_now: Timestamp) -> Vec<Foresight> {
    let mut out: Vec<Foresight> = cells
        .into_iter()
        .flat_map(|c| c.foresight.iter())
        .filter(|f| foresight_is_valid(f, t_now))
        .cloned()
        .collect();
    // open-ended items sort last
    out.sort_by(|a, b| {
        let key = |f: &Foresight| (f.valid_until.is_none(), f.valid_until);
        key(a).cmp(&key(b)).then_with(|| a.foresight_id.cmp(&b.foresight_id))
    });
    out.dedup_by(|a, b| a.foresight_id == b.foresight_id);
    out
}

pub(crate) fn parse_verdict(raw: &str) -> Result<SufficiencyVerdict, String> {
    let mut v: SufficiencyVerdict = serde_json::from_str(strip_fence(raw)).map_err(|e| e.to_string())?;
    if !v.is_sufficient && v.missing_information.is_empty() {
        tracing::warn!("insufficient verdict without missing information; using the reasoning");
        v.missing_information.push(v.reasoning.clone());
    }
    Ok(v)
}

/// Sends the sufficiency prompt. A malformed reply gets one retry; a second
/// malformed reply yields a fail-open verdict and the parse error.
pub fn verify_sufficiency(
    providers: &Providers,
    query: &str,
    docs: &[(String, Timestamp)],
) -> Result<(SufficiencyVerdict, Option<String>), ProviderError> {
    let prompt = prompts::sufficiency_prompt(query, docs);
    let first = providers.chat(&ChatRequest::new(prompt.clone(), schema::SUFFICIENCY, Stage::Search))?;
    let first_err = match parse_verdict(&first) {
        Ok(v) => return Ok((v, None)),
        Err(e) => e,
    };
    tracing::warn!(error = %first_err, "sufficiency reply malformed; retrying");
    let retry = format!("{prompt}{JSON_ONLY_SUFFIX}");
    let second = providers.chat(&ChatRequest::new(retry, schema::SUFFICIENCY, Stage::Search))?;
    match parse_verdict(&second) {
        Ok(v) => Ok((v, None)),
        Err(e) => {
            tracing::error!(error = %e, "sufficiency verifier failed twice; failing open");
            Ok((SufficiencyVerdict::fail_open(), Some(format!("malformed verifier reply: {e}"))))
        }
    }
}

#[derive(Deserialize)]
struct RewriteReply {
    queries: Vec<String>,
    #[serde(default)]
    #[allow(dead_code)]
    reasoning: serde_json::Value,
}

/// Rewritten queries after the cap and dedup rules, or `[original]` with
/// the error when the reply cannot be parsed.
pub fn rewrite_queries(
    providers: &Providers,
    original: &str,
    verdict: &SufficiencyVerdict,
    docs: &[(String, Timestamp)],
) -> Result<(Vec<String>, Option<String>), ProviderError> {
    let prompt = prompts::rewrite_prompt(original, &verdict.key_information_found, &verdict.missing_information, docs);
    let raw = providers.chat(&ChatRequest::new(prompt, schema::REWRITE, Stage::Search))?;
    match serde_json::from_str::<RewriteReply>(strip_fence(&raw)) {
        Ok(reply) => Ok((clean_rewrites(original, reply.queries), None)),
        Err(e) => {
            tracing::error!(error = %e, "rewrite reply malformed; reusing the original query");
            Ok((vec![original.to_string()], Some(format!("malformed rewrite reply: {e}"))))
        }
    }
}

pub(crate) fn clean_rewrites(original: &str, queries: Vec<String>) -> Vec<String> {
    let norm = |s: &str| s.trim().to_lowercase();
    let mut seen: HashSet<String> = HashSet::from([norm(original)]);
    let mut out: Vec<String> = Vec::new();
    for q in queries.into_iter().take(3) {
        let q = q.trim().to_string();
        if !q.is_empty() && seen.insert(norm(&q)) {
            out.push(q);
        }
    }
    if out.len() < 2 {
        out.push(original.to_string());
    }
    out
}

/// Episodes as `(text, date)` pairs in the given order.
pub(crate) fn docs_for<'a>(view: &MemoryView<'_>, ids: impl IntoIterator<Item = &'a CellId>) -> Vec<(String, Timestamp)> {
    ids.into_iter()
        .filter_map(|c| view.cells.get(c))
        .map(|c| (c.episode.clone(), c.event_time()))
        .collect()
}

/// Remembers the round in which each cell first entered the pool.
#[derive(Debug, Default)]
pub(crate) struct FirstSeen(BTreeMap<CellId, usize>);

impl FirstSeen {
    pub fn note(&mut self, list: &RankedList<CellId>, round: usize) -> usize {
        let mut fresh = 0;
        for id in list.ids() {
            if !self.0.contains_key(id) {
                self.0.insert(id.clone(), round);
                fresh += 1;
            }
        }
        fresh
    }

    pub fn round_of(&self, id: &CellId) -> usize {
        self.0.get(id).copied().unwrap_or(1)
    }
}
