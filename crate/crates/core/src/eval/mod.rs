//! Benchmark harness: datasets, the synthetic corpus, accuracy and recall
//! metrics, and segmentation comparisons.

mod dataset;
mod report;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dataset::{
    category, load_dataset, parse_dataset, Conversation, DatasetError, DatasetFormat, EvalDataset, EvalQuestion,
    Session, Validity,
};
pub use report::{render_report, render_segmentation};
pub use synthetic::generate_synthetic;

use crate::ids::CellId;
use crate::prompts::{self, schema};
use crate::providers::{ChatRequest, ProviderError, Providers, Stage};
use crate::recollect::{Mode, Query, RetrievalResult};
use crate::space::{Engine, EngineError, IngestReport};
use crate::text::{normalize_answer, whitespace_token_count};
use crate::time::Timestamp;
use crate::trace::SegmentationStrategy;
use crate::types::RetrievalConfig;

/// How answers are marked correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judge {
    /// Normalized exact match against the gold answer.
    ExactMatch,
    /// Majority of three judge-prompt calls; one call when the chat provider
    /// is deterministic, since the other two would repeat it.
    Provider,
}

impl std::str::FromStr for Judge {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact_match" | "exact" => Ok(Judge::ExactMatch),
            "provider" | "llm" => Ok(Judge::Provider),
            other => Err(format!("unknown judge {other:?} (expected exact_match or provider)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Episode budget for answering.
    pub k: usize,
    /// Extra budgets at which recall is measured (each runs retrieval again).
    pub recall_ks: Vec<usize>,
    pub mode: Mode,
    pub judge: Judge,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { k: 10, recall_ks: vec![1, 3, 5, 10], mode: Mode::Reasoning, judge: Judge::ExactMatch }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub category: String,
    pub answer: String,
    pub correct: bool,
    /// Evidence sessions intersect the sources of the retrieved episodes.
    /// `None` when the question lists no evidence.
    pub evidence_hit: Option<bool>,
    pub retrieved_sessions: Vec<String>,
    pub context_tokens: usize,
    pub rounds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub questions: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ZeroRecall {
    /// Questions with evidence none of whose sessions were retrieved.
    pub questions: usize,
    /// Of those, answered correctly anyway.
    pub answered_correctly: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemBaseStats {
    pub conversations: usize,
    pub cells: usize,
    pub scenes: usize,
    pub avg_cells_per_conversation: f64,
    pub avg_cells_per_scene: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub k: usize,
    pub questions: usize,
    /// `None` (n/a) for a dataset without questions.
    pub overall_accuracy: Option<f64>,
    pub categories: BTreeMap<String, CategoryScore>,
    /// Questions with evidence; the recall denominator.
    pub recall_questions: usize,
    pub recall_at: BTreeMap<usize, f64>,
    pub zero_recall: ZeroRecall,
    pub avg_context_tokens: f64,
    pub membase: MemBaseStats,
    pub failures: usize,
    pub records: Vec<QuestionRecord>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

fn conversation_user(conversation_id: &str) -> String {
    conversation_id.to_string()
}

/// Ingests every conversation into its own memory space.
pub fn ingest_dataset(
    engine: &Engine,
    dataset: &EvalDataset,
    strategy: &SegmentationStrategy,
) -> Result<Vec<IngestReport>, EngineError> {
    dataset
        .conversations
        .iter()
        .map(|c| engine.ingest(&conversation_user(&c.conversation_id), &c.turns(), strategy))
        .collect()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Sessions each cell of a conversation's space was formed from.
fn cell_sessions(engine: &Engine, conv: &Conversation) -> HashMap<CellId, BTreeSet<String>> {
    let by_turn = conv.session_of_turn();
    let Some(space) = engine.space(&conversation_user(&conv.conversation_id)) else {
        return HashMap::new();
    };
    let space = space.read().expect("space lock");
    space
        .cells()
        .values()
        .map(|c| {
            let sessions = c
                .metadata
                .source_turn_ids
                .iter()
                .filter_map(|t| by_turn.get(t.as_str()).cloned())
                .collect();
            (c.cell_id.clone(), sessions)
        })
        .collect()
}

fn query_for(q: &EvalQuestion, conv: &Conversation, base: &RetrievalConfig, k: usize, mode: Mode) -> Query {
    let t_now = q
        .asked_at
        .or_else(|| conv.last_time().map(|t| t.plus_days(1)))
        .unwrap_or(Timestamp::from_unix(0));
    let config = RetrievalConfig { episode_top_k: k, ..base.clone() };
    Query::new(conversation_user(&q.conversation_id), q.question.clone(), t_now)
        .with_mode(mode)
        .with_config(config)
}

fn retrieved_sessions(result: &RetrievalResult, cells: &HashMap<CellId, BTreeSet<String>>) -> BTreeSet<String> {
    result
        .episodes
        .iter()
        .filter_map(|e| cells.get(&e.cell_id))
        .flatten()
        .cloned()
        .collect()
}

fn evidence_hit(q: &EvalQuestion, sessions: &BTreeSet<String>) -> Option<bool> {
    (!q.evidence_session_ids.is_empty()).then(|| q.evidence_session_ids.iter().any(|e| sessions.contains(e)))
}

pub fn judge_answer(providers: &Providers, judge: Judge, q: &EvalQuestion, answer: &str) -> Result<bool, ProviderError> {
    match judge {
        Judge::ExactMatch => {
            let gold = normalize_answer(&q.gold_answer);
            Ok(!gold.is_empty() && gold == normalize_answer(answer))
        }
        Judge::Provider => {
            let calls = if providers.chat_is_deterministic() { 1 } else { 3 };
            let prompt = prompts::judge_prompt(&q.question, &q.gold_answer, answer);
            let mut votes = 0;
            for _ in 0..calls {
                let reply = providers.chat(&ChatRequest::new(prompt.clone(), schema::JUDGE, Stage::Evaluate))?;
                if reply.trim().to_uppercase().starts_with("CORRECT") {
                    votes += 1;
                }
            }
            Ok(votes * 2 > calls)
        }
    }
}

fn membase(engine: &Engine, dataset: &EvalDataset) -> MemBaseStats {
    let mut m = MemBaseStats { conversations: dataset.conversations.len(), ..Default::default() };
    for c in &dataset.conversations {
        if let Ok(s) = engine.stats(&conversation_user(&c.conversation_id)) {
            m.cells += s.cells;
            m.scenes += s.scenes;
        }
    }
    m.avg_cells_per_conversation = ratio(m.cells, m.conversations);
    m.avg_cells_per_scene = ratio(m.cells, m.scenes);
    m
}

/// Answers every question against an engine that already holds the
/// dataset's conversations. Per-question failures are recorded as wrong
/// answers and evaluation continues.
pub fn evaluate(engine: &Engine, dataset: &EvalDataset, opts: &EvalOptions) -> EvalReport {
    let convs: HashMap<&str, &Conversation> =
        dataset.conversations.iter().map(|c| (c.conversation_id.as_str(), c)).collect();
    let sources: HashMap<&str, HashMap<CellId, BTreeSet<String>>> =
        dataset.conversations.iter().map(|c| (c.conversation_id.as_str(), cell_sessions(engine, c))).collect();
    let base = engine.config().clone();
    let empty = HashMap::new();

    let records: Vec<QuestionRecord> = dataset
        .questions
        .par_iter()
        .map(|q| {
            let mut rec = QuestionRecord {
                question_id: q.question_id.clone(),
                category: q.category.clone(),
                answer: String::new(),
                correct: false,
                evidence_hit: None,
                retrieved_sessions: Vec::new(),
                context_tokens: 0,
                rounds: 0,
                error: None,
            };
            let Some(conv) = convs.get(q.conversation_id.as_str()) else {
                rec.error = Some(format!("unknown conversation {}", q.conversation_id));
                return rec;
            };
            let cells = sources.get(q.conversation_id.as_str()).unwrap_or(&empty);
            let query = query_for(q, conv, &base, opts.k, opts.mode);
            match engine.answer(&query) {
                Ok((answer, result)) => {
                    let sessions = retrieved_sessions(&result, cells);
                    rec.evidence_hit = evidence_hit(q, &sessions);
                    rec.retrieved_sessions = sessions.into_iter().collect();
                    rec.context_tokens = whitespace_token_count(&result.final_context);
                    rec.rounds = result.rounds.len();
                    match judge_answer(engine.providers(), opts.judge, q, &answer) {
                        Ok(c) => rec.correct = c,
                        Err(e) => rec.error = Some(format!("judge: {e}")),
                    }
                    rec.answer = answer;
                }
                Err(e) => {
                    tracing::warn!(question = %q.question_id, error = %e, "question failed");
                    rec.error = Some(e.to_string());
                }
            }
            rec
        })
        .collect();

    let mut categories: BTreeMap<String, CategoryScore> = BTreeMap::new();
    for r in &records {
        let c = categories.entry(r.category.clone()).or_default();
        c.questions += 1;
        c.correct += usize::from(r.correct);
    }
    for c in categories.values_mut() {
        c.accuracy = ratio(c.correct, c.questions);
    }
    let correct = records.iter().filter(|r| r.correct).count();
    let with_evidence: Vec<&QuestionRecord> = records.iter().filter(|r| r.evidence_hit.is_some()).collect();
    let zero: Vec<&&QuestionRecord> = with_evidence.iter().filter(|r| r.evidence_hit == Some(false)).collect();

    let mut recall_at = BTreeMap::new();
    recall_at.insert(opts.k, ratio(with_evidence.len() - zero.len(), with_evidence.len()));
    for &k in opts.recall_ks.iter().filter(|&&k| k != opts.k && k > 0) {
        recall_at.insert(k, recall_only(engine, dataset, &convs, &sources, &base, k, opts.mode));
    }

    EvalReport {
        dataset: dataset.name.clone(),
        k: opts.k,
        questions: records.len(),
        overall_accuracy: (!records.is_empty()).then(|| ratio(correct, records.len())),
        categories,
        recall_questions: with_evidence.len(),
        recall_at,
        zero_recall: ZeroRecall {
            questions: zero.len(),
            answered_correctly: zero.iter().filter(|r| r.correct).count(),
        },
        avg_context_tokens: ratio(records.iter().map(|r| r.context_tokens).sum(), records.len()),
        membase: membase(engine, dataset),
        failures: records.iter().filter(|r| r.error.is_some()).count(),
        records,
    }
}

fn recall_only(
    engine: &Engine,
    dataset: &EvalDataset,
    convs: &HashMap<&str, &Conversation>,
    sources: &HashMap<&str, HashMap<CellId, BTreeSet<String>>>,
    base: &RetrievalConfig,
    k: usize,
    mode: Mode,
) -> f64 {
    let hits: Vec<Option<bool>> = dataset
        .questions
        .par_iter()
        .map(|q| {
            let conv = convs.get(q.conversation_id.as_str())?;
            let cells = sources.get(q.conversation_id.as_str())?;
            let result = engine.search(&query_for(q, conv, base, k, mode)).ok();
            let sessions = result.map(|r| retrieved_sessions(&r, cells)).unwrap_or_default();
            evidence_hit(q, &sessions)
        })
        .collect();
    let scored: Vec<bool> = hits.into_iter().flatten().collect();
    ratio(scored.iter().filter(|h| **h).count(), scored.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationRow {
    pub label: String,
    pub strategy: SegmentationStrategy,
    /// `None` when the strategy could not run on this dataset.
    pub report: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn inapplicable(dataset: &EvalDataset, strategy: &SegmentationStrategy) -> Option<String> {
    if let Err(e) = strategy.validate() {
        return Some(e.to_string());
    }
    if *strategy == SegmentationStrategy::OracleSession {
        let missing = dataset
            .conversations
            .iter()
            .flat_map(|c| c.sessions.iter().flat_map(|s| s.turns.iter()))
            .any(|t| t.session_id.is_none());
        if missing {
            return Some("turns carry no session ids".to_string());
        }
    }
    None
}

/// Runs the whole pipeline once per strategy on a fresh engine built from
/// the same providers and configuration.
pub fn compare_segmentation(
    dataset: &EvalDataset,
    strategies: &[SegmentationStrategy],
    providers: &Providers,
    config: &RetrievalConfig,
    opts: &EvalOptions,
) -> Vec<SegmentationRow> {
    strategies
        .iter()
        .map(|strategy| {
            let row = |report, note| SegmentationRow { label: strategy.label(), strategy: *strategy, report, note };
            if let Some(why) = inapplicable(dataset, strategy) {
                return row(None, Some(format!("n/a: {why}")));
            }
            let engine = Engine::new(providers.clone(), config.clone());
            match ingest_dataset(&engine, dataset, strategy) {
                Ok(_) => row(Some(evaluate(&engine, dataset, opts)), None),
                Err(e) => row(None, Some(format!("n/a: {e}"))),
            }
        })
        .collect()
}
