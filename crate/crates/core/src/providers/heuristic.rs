//! Deterministic stand-in for an LLM, dispatching on the response schema.
//!
//! Each rule reads the structured sections of the matching prompt template
//! and answers with simple lexical heuristics. The rules are good enough to
//! drive the full lifecycle offline on templated corpora; they are not meant
//! to approximate a real model's quality.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde_json::json;

use super::{ChatProvider, ChatRequest, ProviderError, ProviderResult};
use crate::prompts::{self, schema, section};
use crate::text::{content_tokens, normalize_answer, split_sentences, tokenize};
use crate::time::Timestamp;

/// Gap between adjacent turns that the boundary rule treats as a new episode.
pub const BOUNDARY_GAP_SECONDS: i64 = 30 * 60;

#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicChat;

impl HeuristicChat {
    pub fn new() -> Self {
        Self
    }
}

impl ChatProvider for HeuristicChat {
    fn chat(&self, request: &ChatRequest) -> ProviderResult<String> {
        let p = request.prompt.as_str();
        match request.schema() {
            Some(schema::BOUNDARY) => Ok(boundary(p)),
            Some(schema::SYNTHESIS) => Ok(synthesis(p)),
            Some(schema::EXTRACTION) => Ok(extraction(p)),
            Some(schema::SCENE_SUMMARY) => Ok(scene_summary(p)),
            Some(schema::PROFILE) => Ok(profile(p)),
            Some(schema::SUFFICIENCY) => Ok(sufficiency(p)),
            Some(schema::REWRITE) => Ok(rewrite(p)),
            Some(schema::ANSWER) => Ok(answer(p)),
            Some(schema::JUDGE) => Ok(judge(p)),
            other => Err(ProviderError::Usage(format!(
                "no reference rule for response schema {other:?}"
            ))),
        }
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

fn line_value<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(label))
        .map(str::trim)
}

fn turn_lines(block: &str) -> Vec<(Timestamp, String, String)> {
    block.lines().filter_map(prompts::parse_turn_line).collect()
}

fn boundary(p: &str) -> String {
    let before = turn_lines(
        section(p, "Turns before the candidate boundary:\n", "\n\nTurns after").unwrap_or(""),
    );
    let after = turn_lines(
        section(p, "Turns after the candidate boundary:\n", "\n\nConsider").unwrap_or(""),
    );
    match (before.last(), after.first()) {
        (Some(b), Some(a)) if a.0.unix() - b.0.unix() >= BOUNDARY_GAP_SECONDS => "BOUNDARY",
        _ => "CONTINUE",
    }
    .to_string()
}

fn synthesis(p: &str) -> String {
    let date = line_value(p, "Segment date:").unwrap_or("an unknown date");
    let turns: Vec<(String, String)> = turn_lines(section(p, "Conversation:\n", "\n\nEpisode:").unwrap_or(""))
        .into_iter()
        .map(|(_, s, c)| (s, c))
        .collect();
    prompts::template_narrative(date, &turns)
}

static HEADER: OnceLock<Regex> = OnceLock::new();
static NEXT_SPAN: OnceLock<Regex> = OnceLock::new();
static UNTIL_DATE: OnceLock<Regex> = OnceLock::new();
static PERMANENT: OnceLock<Regex> = OnceLock::new();

/// Sentences of an episode with the template header (`On <date>, <who> discussed: `) removed.
fn episode_sentences(episode: &str) -> Vec<String> {
    let header = re(&HEADER, r"^On \d{4}-\d{2}-\d{2}, .+? discussed:\s*");
    split_sentences(episode)
        .into_iter()
        .map(|s| header.replace(&s, "").trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn extraction(p: &str) -> String {
    let event_time = line_value(p, "Episode time:")
        .and_then(|s| Timestamp::parse(s).ok())
        .unwrap_or_default();
    let episode = section(p, "Episode:\n", "\n\nReturn strict JSON").unwrap_or("");
    let next_span = re(&NEXT_SPAN, r"(?i)\bfor the next (\d+) (days?|weeks?)\b");
    let until_date = re(&UNTIL_DATE, r"(?i)\buntil (\d{4}-\d{2}-\d{2})\b");
    let permanent = re(&PERMANENT, r"(?i)\b(permanently|for good)\b");

    let mut facts = Vec::new();
    let mut foresight = Vec::new();
    for s in episode_sentences(episode) {
        if s.contains('?') || tokenize(&s).len() < 3 {
            continue;
        }
        let from = event_time.rfc3339();
        if let Some(c) = next_span.captures(&s) {
            let n: i64 = c[1].parse().unwrap_or(0);
            let days = if c[2].to_lowercase().starts_with("week") { n * 7 } else { n };
            foresight.push(json!({"text": s, "valid_from": from, "valid_until": event_time.plus_days(days).rfc3339()}));
        } else if let Some(c) = until_date.captures(&s) {
            let until = Timestamp::parse(&c[1]).map(|t| t.rfc3339()).ok();
            foresight.push(json!({"text": s, "valid_from": from, "valid_until": until}));
        } else if permanent.is_match(&s) {
            foresight.push(json!({"text": s, "valid_from": from, "valid_until": null}));
        }
        facts.push(s);
    }
    json!({"facts": facts, "foresight": foresight}).to_string()
}

/// Joins the first sentence of each episode in the prompt.
fn scene_summary(p: &str) -> String {
    let body = section(p, prompts::EPISODE_HEADER, "\n\nSummary:").unwrap_or("");
    // Drop the "<n>\n" that follows each header.
    let episodes: Vec<&str> = body
        .split(prompts::EPISODE_HEADER)
        .map(|chunk| chunk.split_once('\n').map(|(_, t)| t).unwrap_or(""))
        .collect();
    crate::consolidation::template_summary(&episodes)
}

static MEASURE: OnceLock<Regex> = OnceLock::new();
static ON_DATE: OnceLock<Regex> = OnceLock::new();

fn profile(p: &str) -> String {
    let latest = line_value(p, "Scene period:")
        .and_then(|s| s.split(" to ").nth(1))
        .and_then(|s| Timestamp::parse(s).ok())
        .unwrap_or_default();
    let summaries = section(p, "Scene summaries:\n", "\n\nReturn strict JSON").unwrap_or("");
    let measure = re(
        &MEASURE,
        r"(?i)\bmy ([a-z]+(?: [a-z]+)?) is (?:now |still )?(-?\d+(?:\.\d+)?(?: ?[a-z%]+)?)",
    );
    // each observation is dated by the nearest preceding "On YYYY-MM-DD"
    let dated = re(&ON_DATE, r"\bOn (\d{4}-\d{2}-\d{2})");
    let dates: Vec<(usize, Timestamp)> = dated
        .captures_iter(summaries)
        .filter_map(|c| Some((c.get(0)?.start(), Timestamp::parse(&c[1]).ok()?)))
        .collect();
    let mut explicit = Vec::new();
    for c in measure.captures_iter(summaries) {
        let at = c.get(0).map_or(0, |m| m.start());
        let when = dates.iter().rev().find(|(pos, _)| *pos <= at).map_or(latest, |(_, t)| *t);
        explicit.push(json!({
            "key": c[1].to_lowercase(),
            "value": c[2].trim(),
            "timestamp": when.rfc3339(),
        }));
    }
    json!({"explicit": explicit, "implicit": []}).to_string()
}

/// `(document number, content)` pairs from a rendered document block.
fn parse_docs(block: &str) -> Vec<(usize, String)> {
    let mut out: Vec<(usize, String)> = Vec::new();
    for line in block.lines() {
        if let Some(rest) = line.strip_prefix("Document ") {
            if let Some(n) = rest.strip_suffix(':').and_then(|n| n.parse().ok()) {
                out.push((n, String::new()));
                continue;
            }
        }
        if let Some(last) = out.last_mut() {
            let text = line.strip_prefix("Content: ").unwrap_or(line);
            if !line.starts_with("Date: ") {
                last.1.push_str(text);
                last.1.push('\n');
            }
        }
    }
    out
}

fn sufficiency(p: &str) -> String {
    let query = section(p, "User Query:\n", "\n\nRetrieved Documents:").unwrap_or("").trim();
    let docs = parse_docs(section(p, "Retrieved Documents:\n", "\n\n### Instructions:").unwrap_or(""));
    let doc_tokens: Vec<BTreeSet<String>> = docs
        .iter()
        .map(|(_, text)| tokenize(text).into_iter().collect())
        .collect();
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for tok in content_tokens(query) {
        match doc_tokens.iter().position(|d| d.contains(&tok)) {
            Some(i) => found.push(format!("Mention of '{tok}' (Source: Doc {})", docs[i].0)),
            None => missing.push(format!("No mention of '{tok}'")),
        }
    }
    let sufficient = missing.is_empty() && !docs.is_empty();
    if !sufficient && missing.is_empty() {
        missing.push("No documents retrieved".to_string());
    }
    let reasoning = if sufficient {
        "Every query term is covered by the retrieved documents.".to_string()
    } else {
        format!("Insufficient: {}.", missing.join("; "))
    };
    json!({
        "is_sufficient": sufficient,
        "reasoning": reasoning,
        "key_information_found": found,
        "missing_information": missing,
    })
    .to_string()
}

static QUOTED: OnceLock<Regex> = OnceLock::new();

fn rewrite(p: &str) -> String {
    let original = section(p, "Original Query:\n", "\n\nKey Information Found:").unwrap_or("").trim();
    let missing_block = section(p, "Missing Information:\n", "\n\nRetrieved Documents").unwrap_or("");
    let quoted = re(&QUOTED, r"'([^']+)'");
    let mut missing: Vec<String> = quoted
        .captures_iter(missing_block)
        .map(|c| c[1].to_lowercase())
        .collect();
    if missing.is_empty() {
        missing = missing_block
            .lines()
            .flat_map(content_tokens)
            .filter(|t| !matches!(t.as_str(), "none" | "mention" | "no"))
            .collect();
    }
    let keywords = content_tokens(original);
    let mut queries = Vec::new();
    let combo: Vec<&str> = keywords.iter().take(5).map(String::as_str).collect();
    if !combo.is_empty() {
        queries.push(combo.join(" "));
    }
    if !missing.is_empty() {
        queries.push(format!("Which conversations mention {}", missing.join(" ")));
    }
    let anchor = keywords
        .iter()
        .find(|k| !missing.contains(k))
        .or(keywords.first())
        .cloned()
        .unwrap_or_else(|| original.to_string());
    queries.push(format!("The user talked about {anchor} and {}", missing.join(" ")).trim().to_string());
    queries.dedup();
    json!({
        "queries": queries,
        "reasoning": "Q1: Keyword combo; Q2: Concept expansion on missing terms; Q3: Hypothetical statement",
    })
    .to_string()
}

static EPISODE_LINE: OnceLock<Regex> = OnceLock::new();
static IS_VALUE: OnceLock<Regex> = OnceLock::new();

/// Extractive reader over the rendered context.
fn answer(p: &str) -> String {
    let context = section(p, "past conversations.\n\n", "\n\nQuestion: ").unwrap_or("");
    let question = section(p, "\n\nQuestion: ", "\n\nAnswer concisely").unwrap_or("").trim();
    let header = re(&EPISODE_LINE, r"^\[(\d+)\] Date: (\S+)");
    let q_tokens: BTreeSet<String> = content_tokens(question).into_iter().collect();
    if q_tokens.is_empty() {
        return "unknown".to_string();
    }

    // (score, date, order, sentence)
    let mut best: Option<(usize, String, usize, String)> = None;
    let mut date = String::new();
    let mut in_episodes = false;
    let mut order = 0usize;
    for line in context.lines() {
        if line.starts_with("Episodes:") {
            in_episodes = true;
            continue;
        }
        if line.starts_with("Valid foresight:") || line.starts_with("User profile:") {
            in_episodes = false;
            continue;
        }
        if !in_episodes {
            continue;
        }
        if let Some(c) = header.captures(line) {
            date = c[2].to_string();
            continue;
        }
        for s in episode_sentences(line) {
            order += 1;
            let toks: BTreeSet<String> = tokenize(&s).into_iter().collect();
            let score = q_tokens.intersection(&toks).count();
            if score == 0 {
                continue;
            }
            let candidate = (score, date.clone(), order, s);
            let better = match &best {
                None => true,
                Some(b) => (candidate.0, &candidate.1, candidate.2) > (b.0, &b.1, b.2),
            };
            if better {
                best = Some(candidate);
            }
        }
    }
    let Some((_, date, _, sentence)) = best else {
        return "unknown".to_string();
    };
    if tokenize(question).first().map(String::as_str) == Some("when") {
        return date;
    }
    let is_value = re(&IS_VALUE, r"(?i)\bis (?:now |still )?(.+)$");
    let value = is_value
        .captures_iter(&sentence)
        .last()
        .map(|c| c[1].to_string())
        .unwrap_or_else(|| sentence.split_once(": ").map_or(sentence.clone(), |(_, r)| r.to_string()));
    value.trim().trim_end_matches(['.', '!', ',', ';']).trim().to_string()
}

fn judge(p: &str) -> String {
    let gold = normalize_answer(line_value(p, "Gold answer:").unwrap_or(""));
    let given = normalize_answer(line_value(p, "Generated answer:").unwrap_or(""));
    let hit = !gold.is_empty() && format!(" {given} ").contains(&format!(" {gold} "));
    if hit { "CORRECT" } else { "WRONG" }.to_string()
}
