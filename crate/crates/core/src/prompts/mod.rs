//! Versioned prompt templates and their renderers.
//!
//! Each template is keyed by the response-schema tag sent with the request.
//! Placeholders are `{name}`; `{{` and `}}` render as literal braces.
//! The layout markers below are also what the reference chat provider parses.

use crate::time::Timestamp;
use crate::types::DialogueTurn;

pub const BOUNDARY_V1: &str = include_str!("boundary_v1.txt");
pub const SYNTHESIS_V1: &str = include_str!("synthesis_v1.txt");
pub const EXTRACTION_V1: &str = include_str!("extraction_v1.txt");
pub const SCENE_SUMMARY_V1: &str = include_str!("scene_summary_v1.txt");
pub const PROFILE_V1: &str = include_str!("profile_v1.txt");
pub const SUFFICIENCY_V1: &str = include_str!("sufficiency_v1.txt");
pub const REWRITE_V1: &str = include_str!("rewrite_v1.txt");
pub const ANSWER_V1: &str = include_str!("answer_v1.txt");
pub const JUDGE_V1: &str = include_str!("judge_v1.txt");

pub mod schema {
    pub const BOUNDARY: &str = "boundary_v1";
    pub const SYNTHESIS: &str = "synthesis_v1";
    pub const EXTRACTION: &str = "extraction_v1";
    pub const SCENE_SUMMARY: &str = "scene_summary_v1";
    pub const PROFILE: &str = "profile_v1";
    pub const SUFFICIENCY: &str = "sufficiency_v1";
    pub const REWRITE: &str = "rewrite_v1";
    pub const ANSWER: &str = "answer_v1";
    pub const JUDGE: &str = "judge_v1";
}

/// Appended to a prompt when retrying after an unparseable JSON reply.
pub const JSON_ONLY_SUFFIX: &str = "\n\nReply with valid JSON only.";

/// Substitutes `{name}` placeholders. Unknown `{...}` sequences are kept verbatim.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("{{") {
            out.push('{');
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            out.push('}');
            rest = &tail[2..];
        } else if tail.starts_with('{') {
            let value = tail[1..].find('}').and_then(|end| {
                let name = &tail[1..1 + end];
                vars.iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| (*v, end + 2))
            });
            match value {
                Some((v, consumed)) => {
                    out.push_str(v);
                    rest = &tail[consumed..];
                }
                None => {
                    out.push('{');
                    rest = &tail[1..];
                }
            }
        } else {
            out.push('}');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

/// Text between `start` and the next `end` (or the end of `text`).
pub fn section<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let body = &text[from..];
    Some(match body.find(end) {
        Some(to) => &body[..to],
        None => body,
    })
}

pub fn render_turn_line(turn: &DialogueTurn) -> String {
    format!(
        "[{}] {}: {}",
        turn.timestamp,
        turn.speaker,
        turn.content.split_whitespace().collect::<Vec<_>>().join(" ")
    )
}

/// Parses a line produced by [`render_turn_line`].
pub fn parse_turn_line(line: &str) -> Option<(Timestamp, String, String)> {
    let line = line.trim();
    let rest = line.strip_prefix('[')?;
    let (ts, rest) = rest.split_once("] ")?;
    let (speaker, content) = rest.split_once(": ")?;
    Some((Timestamp::parse(ts).ok()?, speaker.to_string(), content.to_string()))
}

fn turn_block(turns: &[DialogueTurn]) -> String {
    turns.iter().map(render_turn_line).collect::<Vec<_>>().join("\n")
}

pub fn boundary_prompt(before: &[DialogueTurn], after: &[DialogueTurn]) -> String {
    render(
        BOUNDARY_V1,
        &[("before", &turn_block(before)), ("after", &turn_block(after))],
    )
}

/// "A", "A and B", "A, B and C" in first-appearance order.
pub fn join_speakers<S: AsRef<str>>(speakers: &[S]) -> String {
    let mut uniq: Vec<&str> = Vec::new();
    for s in speakers {
        if !uniq.contains(&s.as_ref()) {
            uniq.push(s.as_ref());
        }
    }
    match uniq.len() {
        0 => String::new(),
        1 => uniq[0].to_string(),
        n => format!("{} and {}", uniq[..n - 1].join(", "), uniq[n - 1]),
    }
}

pub fn synthesis_prompt(turns: &[DialogueTurn]) -> String {
    let date = turns.last().map(|t| t.timestamp.date_string()).unwrap_or_default();
    let speakers: Vec<&str> = turns.iter().map(|t| t.speaker.as_str()).collect();
    render(
        SYNTHESIS_V1,
        &[
            ("date", &date),
            ("speakers", &join_speakers(&speakers)),
            ("turns", &turn_block(turns)),
        ],
    )
}

/// Number of tokens kept from each turn by the template narrative.
pub const NARRATIVE_TOKENS_PER_TURN: usize = 40;

/// Deterministic template episode:
/// `On {date}, {speakers} discussed: {speaker}: {first 40 tokens}. ...`
pub fn template_narrative(date: &str, turns: &[(String, String)]) -> String {
    let speakers: Vec<&str> = turns.iter().map(|(s, _)| s.as_str()).collect();
    let mut out = format!("On {date}, {} discussed:", join_speakers(&speakers));
    for (speaker, content) in turns {
        let mut text = crate::text::first_tokens(content, NARRATIVE_TOKENS_PER_TURN);
        if !text.ends_with(['.', '!', '?']) {
            text.push('.');
        }
        out.push(' ');
        out.push_str(speaker);
        out.push_str(": ");
        out.push_str(&text);
    }
    out
}

pub fn extraction_prompt(episode: &str, event_time: Timestamp) -> String {
    render(
        EXTRACTION_V1,
        &[("event_time", &event_time.rfc3339()), ("episode", episode)],
    )
}

pub const EPISODE_HEADER: &str = "### Episode";

pub fn scene_summary_prompt(earliest: Timestamp, latest: Timestamp, episodes: &[&str]) -> String {
    let block = episodes
        .iter()
        .enumerate()
        .map(|(i, e)| format!("{EPISODE_HEADER} {}\n{}", i + 1, e.trim()))
        .collect::<Vec<_>>()
        .join("\n\n");
    render(
        SCENE_SUMMARY_V1,
        &[
            ("earliest", &earliest.rfc3339()),
            ("latest", &latest.rfc3339()),
            ("episodes", &block),
        ],
    )
}

pub fn profile_prompt(earliest: Timestamp, latest: Timestamp, summaries: &[String]) -> String {
    let block = summaries
        .iter()
        .map(|s| format!("- {}", s.trim()))
        .collect::<Vec<_>>()
        .join("\n");
    render(
        PROFILE_V1,
        &[
            ("earliest", &earliest.rfc3339()),
            ("latest", &latest.rfc3339()),
            ("summaries", &block),
        ],
    )
}

/// One retrieved document as shown to the verifier and the rewriter.
pub fn render_docs(docs: &[(String, Timestamp)]) -> String {
    if docs.is_empty() {
        return "(no documents retrieved)".to_string();
    }
    docs.iter()
        .enumerate()
        .map(|(i, (text, date))| {
            format!("Document {}:\nDate: {}\nContent: {}", i + 1, date.date_string(), text.trim())
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn sufficiency_prompt(query: &str, docs: &[(String, Timestamp)]) -> String {
    render(
        SUFFICIENCY_V1,
        &[("query", query), ("retrieved_docs", &render_docs(docs))],
    )
}

fn bullet_list(items: &[String]) -> String {
    if items.is_empty() {
        "(none)".to_string()
    } else {
        items.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n")
    }
}

pub fn rewrite_prompt(
    original: &str,
    key_info: &[String],
    missing_info: &[String],
    docs: &[(String, Timestamp)],
) -> String {
    render(
        REWRITE_V1,
        &[
            ("original_query", original),
            ("key_info", &bullet_list(key_info)),
            ("missing_info", &bullet_list(missing_info)),
            ("retrieved_docs", &render_docs(docs)),
        ],
    )
}

pub fn answer_prompt(context: &str, question: &str) -> String {
    render(ANSWER_V1, &[("context", context), ("question", question)])
}

pub fn judge_prompt(question: &str, gold: &str, answer: &str) -> String {
    render(
        JUDGE_V1,
        &[("question", question), ("gold", gold), ("answer", answer)],
    )
}
