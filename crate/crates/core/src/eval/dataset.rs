use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::time::Timestamp;
use crate::types::DialogueTurn;

pub mod category {
    pub const SINGLE_HOP: &str = "single_hop";
    pub const MULTI_HOP: &str = "multi_hop";
    pub const TEMPORAL: &str = "temporal";
    pub const OPEN_DOMAIN: &str = "open_domain";
    pub const KNOWLEDGE_UPDATE: &str = "knowledge_update";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub timestamp: Timestamp,
    pub turns: Vec<DialogueTurn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub sessions: Vec<Session>,
}

impl Conversation {
    pub fn turns(&self) -> Vec<DialogueTurn> {
        self.sessions.iter().flat_map(|s| s.turns.iter().cloned()).collect()
    }

    /// turn id -> session id, from the session structure (not the turn field).
    pub fn session_of_turn(&self) -> HashMap<String, String> {
        self.sessions
            .iter()
            .flat_map(|s| s.turns.iter().map(move |t| (t.turn_id.as_str().to_string(), s.session_id.clone())))
            .collect()
    }

    pub fn last_time(&self) -> Option<Timestamp> {
        self.sessions.iter().flat_map(|s| s.turns.iter().map(|t| t.timestamp)).max()
    }
}

/// Closed validity window of a planted time-bounded fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validity {
    pub from: Timestamp,
    pub until: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalQuestion {
    pub question_id: String,
    pub conversation_id: String,
    pub question: String,
    pub gold_answer: String,
    pub category: String,
    pub evidence_session_ids: Vec<String>,
    /// Query time; defaults to one day after the conversation's last turn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asked_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validity: Option<Validity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDataset {
    pub name: String,
    pub conversations: Vec<Conversation>,
    pub questions: Vec<EvalQuestion>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("record {record}: {message}")]
    Record { record: String, message: String },
    #[error("unknown dataset format {0:?} (expected locomo_json, longmemeval_json or synthetic)")]
    Format(String),
}

fn record_err(record: impl Into<String>, message: impl Into<String>) -> DatasetError {
    DatasetError::Record { record: record.into(), message: message.into() }
}

impl EvalDataset {
    /// Checks cross references: evidence ids, conversation ids, unique ids.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut sessions: HashMap<&str, BTreeSet<&str>> = HashMap::new();
        let mut turn_ids = BTreeSet::new();
        for c in &self.conversations {
            let ids = sessions.entry(c.conversation_id.as_str()).or_default();
            for s in &c.sessions {
                if !ids.insert(s.session_id.as_str()) {
                    return Err(record_err(&c.conversation_id, format!("duplicate session {}", s.session_id)));
                }
                for t in &s.turns {
                    if !turn_ids.insert((c.conversation_id.as_str(), t.turn_id.as_str())) {
                        return Err(record_err(&c.conversation_id, format!("duplicate turn {}", t.turn_id)));
                    }
                }
            }
        }
        let mut qids = BTreeSet::new();
        for q in &self.questions {
            if !qids.insert(q.question_id.as_str()) {
                return Err(record_err(&q.question_id, "duplicate question id"));
            }
            let Some(ids) = sessions.get(q.conversation_id.as_str()) else {
                return Err(record_err(&q.question_id, format!("unknown conversation {}", q.conversation_id)));
            };
            if let Some(missing) = q.evidence_session_ids.iter().find(|e| !ids.contains(e.as_str())) {
                return Err(record_err(&q.question_id, format!("evidence session {missing} does not exist")));
            }
        }
        Ok(())
    }

    pub fn conversation(&self, id: &str) -> Option<&Conversation> {
        self.conversations.iter().find(|c| c.conversation_id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("datasets serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    LocomoJson,
    LongmemevalJson,
    Synthetic,
}

impl FromStr for DatasetFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "locomo_json" | "locomo" => Ok(DatasetFormat::LocomoJson),
            "longmemeval_json" | "longmemeval" => Ok(DatasetFormat::LongmemevalJson),
            "synthetic" => Ok(DatasetFormat::Synthetic),
            other => Err(DatasetError::Format(other.to_string())),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::LocomoJson => "locomo_json",
            DatasetFormat::LongmemevalJson => "longmemeval_json",
            DatasetFormat::Synthetic => "synthetic",
        })
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<EvalDataset, DatasetError> {
    let text = std::fs::read_to_string(path)?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
    parse_dataset(&text, format, &name)
}

pub fn parse_dataset(text: &str, format: DatasetFormat, name: &str) -> Result<EvalDataset, DatasetError> {
    let ds = match format {
        DatasetFormat::Synthetic => serde_json::from_str(text)?,
        DatasetFormat::LocomoJson => locomo(&serde_json::from_str(text)?, name)?,
        DatasetFormat::LongmemevalJson => longmemeval(&serde_json::from_str(text)?, name)?,
    };
    ds.validate()?;
    Ok(ds)
}

fn parse_time(s: &str, formats: &[&str]) -> Option<Timestamp> {
    let s = s.trim();
    for f in formats {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, f) {
            return Some(Timestamp::from_unix(Utc.from_utc_datetime(&dt).timestamp()));
        }
    }
    Timestamp::parse(s).ok()
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

const LOCOMO_TIME: &[&str] = &["%I:%M %p on %d %B, %Y", "%I:%M %p on %d %b, %Y"];
const TURN_SPACING_SECS: i64 = 30;

fn locomo_category(v: &Value) -> String {
    match v.as_i64() {
        Some(1) => category::MULTI_HOP.to_string(),
        Some(2) => category::TEMPORAL.to_string(),
        Some(3) => category::OPEN_DOMAIN.to_string(),
        Some(4) => category::SINGLE_HOP.to_string(),
        _ => scalar_text(v),
    }
}

fn locomo(root: &Value, name: &str) -> Result<EvalDataset, DatasetError> {
    let samples = root.as_array().ok_or_else(|| record_err(name, "expected a JSON array of samples"))?;
    let mut conversations = Vec::new();
    let mut questions = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        let cid = sample["sample_id"].as_str().map_or_else(|| format!("locomo_{i}"), str::to_string);
        let conv = sample["conversation"]
            .as_object()
            .ok_or_else(|| record_err(&cid, "missing conversation object"))?;
        let mut numbers: Vec<u32> = conv
            .keys()
            .filter_map(|k| k.strip_prefix("session_")?.parse().ok())
            .collect();
        numbers.sort_unstable();
        let mut sessions = Vec::new();
        for n in numbers {
            let sid = format!("session_{n}");
            let when = conv
                .get(&format!("session_{n}_date_time"))
                .and_then(Value::as_str)
                .and_then(|s| parse_time(s, LOCOMO_TIME))
                .ok_or_else(|| record_err(format!("{cid}/{sid}"), "missing or unparseable date_time"))?;
            let raw = conv[&sid].as_array().ok_or_else(|| record_err(format!("{cid}/{sid}"), "turns must be an array"))?;
            let mut turns = Vec::new();
            for (j, t) in raw.iter().enumerate() {
                let id = t["dia_id"].as_str().map_or_else(|| format!("D{n}:{}", j + 1), str::to_string);
                let (Some(speaker), Some(text)) = (t["speaker"].as_str(), t["text"].as_str()) else {
                    return Err(record_err(format!("{cid}/{id}"), "turn needs speaker and text"));
                };
                turns.push(
                    DialogueTurn::new(format!("{cid}:{id}"), speaker, text, when.plus_seconds(j as i64 * TURN_SPACING_SECS))
                        .with_session(sid.clone()),
                );
            }
            sessions.push(Session { session_id: sid, timestamp: when, turns });
        }
        for (j, qa) in sample["qa"].as_array().map(Vec::as_slice).unwrap_or(&[]).iter().enumerate() {
            let qid = format!("{cid}/q{j}");
            let question = qa["question"].as_str().ok_or_else(|| record_err(&qid, "missing question"))?;
            let gold = if qa.get("answer").is_some() { &qa["answer"] } else { &qa["adversarial_answer"] };
            let mut evidence: Vec<String> = qa["evidence"]
                .as_array()
                .map(Vec::as_slice)
                .unwrap_or(&[])
                .iter()
                .filter_map(Value::as_str)
                .flat_map(|e| e.split([';', ','].as_ref()))
                .filter_map(|e| {
                    let d = e.trim().strip_prefix('D')?;
                    let (s, _) = d.split_once(':')?;
                    Some(format!("session_{}", s.trim()))
                })
                .collect();
            evidence.dedup();
            questions.push(EvalQuestion {
                question_id: qid,
                conversation_id: cid.clone(),
                question: question.to_string(),
                gold_answer: scalar_text(gold),
                category: locomo_category(&qa["category"]),
                evidence_session_ids: evidence,
                asked_at: None,
                validity: None,
            });
        }
        conversations.push(Conversation { conversation_id: cid, sessions });
    }
    Ok(EvalDataset { name: name.to_string(), conversations, questions })
}

const LME_TIME: &[&str] = &["%Y/%m/%d (%a) %H:%M", "%Y/%m/%d %H:%M"];

fn lme_category(t: &str) -> String {
    match t {
        "single-session-user" | "single-session-assistant" => category::SINGLE_HOP.to_string(),
        "multi-session" => category::MULTI_HOP.to_string(),
        "temporal-reasoning" => category::TEMPORAL.to_string(),
        "knowledge-update" => category::KNOWLEDGE_UPDATE.to_string(),
        other => other.to_string(),
    }
}

fn longmemeval(root: &Value, name: &str) -> Result<EvalDataset, DatasetError> {
    let items = root.as_array().ok_or_else(|| record_err(name, "expected a JSON array of questions"))?;
    let mut conversations = Vec::new();
    let mut questions = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let qid = item["question_id"].as_str().map_or_else(|| format!("lme_{i}"), str::to_string);
        let cid = format!("lme_{qid}");
        let ids = item["haystack_session_ids"].as_array().ok_or_else(|| record_err(&qid, "missing haystack_session_ids"))?;
        let dates = item["haystack_dates"].as_array().ok_or_else(|| record_err(&qid, "missing haystack_dates"))?;
        let bodies = item["haystack_sessions"].as_array().ok_or_else(|| record_err(&qid, "missing haystack_sessions"))?;
        if ids.len() != dates.len() || ids.len() != bodies.len() {
            return Err(record_err(&qid, "haystack ids, dates and sessions differ in length"));
        }
        let mut sessions = Vec::new();
        for ((sid, date), body) in ids.iter().zip(dates).zip(bodies) {
            let sid = scalar_text(sid);
            let when = date
                .as_str()
                .and_then(|d| parse_time(d, LME_TIME))
                .ok_or_else(|| record_err(format!("{qid}/{sid}"), "unparseable session date"))?;
            let raw = body.as_array().ok_or_else(|| record_err(format!("{qid}/{sid}"), "session must be an array"))?;
            let mut turns = Vec::new();
            for (j, t) in raw.iter().enumerate() {
                let (Some(role), Some(content)) = (t["role"].as_str(), t["content"].as_str()) else {
                    return Err(record_err(format!("{qid}/{sid}/{j}"), "turn needs role and content"));
                };
                turns.push(
                    DialogueTurn::new(format!("{sid}:{j}"), role, content, when.plus_seconds(j as i64 * TURN_SPACING_SECS))
                        .with_session(sid.clone()),
                );
            }
            sessions.push(Session { session_id: sid, timestamp: when, turns });
        }
        let evidence = item["answer_session_ids"]
            .as_array()
            .map(Vec::as_slice)
            .unwrap_or(&[])
            .iter()
            .map(scalar_text)
            .collect();
        questions.push(EvalQuestion {
            question_id: qid.clone(),
            conversation_id: cid.clone(),
            question: item["question"].as_str().ok_or_else(|| record_err(&qid, "missing question"))?.to_string(),
            gold_answer: scalar_text(&item["answer"]),
            category: lme_category(item["question_type"].as_str().unwrap_or("unknown")),
            evidence_session_ids: evidence,
            asked_at: item["question_date"].as_str().and_then(|d| parse_time(d, LME_TIME)),
            validity: None,
        });
        conversations.push(Conversation { conversation_id: cid, sessions });
    }
    Ok(EvalDataset { name: name.to_string(), conversations, questions })
}
