#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use scenemem::prompts::{schema, EPISODE_HEADER};
use scenemem::providers::{ChatProvider, FnChat, HeuristicChat, Providers};
use scenemem::time::Timestamp;
use scenemem::types::DialogueTurn;
use serde_json::{json, Value};
use tower::ServiceExt;

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    raw(app, req.body(body).unwrap()).await
}

pub async fn raw(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).expect("JSON body") };
    (status, v)
}

pub fn turns_json(user: &str, texts: &[(&str, &str)], start: Timestamp) -> Value {
    let turns: Vec<Value> = texts
        .iter()
        .enumerate()
        .map(|(i, (speaker, text))| {
            json!({
                "turn_id": format!("{user}_{i:03}"),
                "speaker": speaker,
                "content": text,
                "timestamp": start.plus_seconds(60 * i as i64),
            })
        })
        .collect();
    Value::Array(turns)
}

pub fn date(y: i32, m: u32, d: u32) -> Timestamp {
    Timestamp::from_ymd(y, m, d).unwrap()
}

/// The four measurement snippets: (date, text).
pub const MEASUREMENTS: [((i32, u32, u32), &str); 4] = [
    ((2025, 7, 7), "I just measured my waist circumference, and it is 104 cm. Can you give me some advice?"),
    ((2025, 10, 20), "My waist is now 96 cm, down 8 cm! My pants feel loose."),
    ((2025, 11, 3), "The doctor said my fatty liver has improved (moderate to mild). Waist is now 95 cm."),
    ((2025, 11, 3), "My weight is still 80 kg, no rebound. I can keep it under control even in winter."),
];

pub fn measurement_turns() -> Vec<DialogueTurn> {
    MEASUREMENTS
        .iter()
        .enumerate()
        .map(|(i, ((y, m, d), text))| {
            DialogueTurn::new(format!("m{i}"), "User", *text, Timestamp::from_ymd_hms(*y, *m, *d, 9, i as u32, 0).unwrap())
        })
        .collect()
}

/// Scene summaries keep whole episodes; the profile extractor emits the
/// observation behind every snippet visible in its prompt.
pub fn measurement_providers() -> Providers {
    let script: [(&str, &str, &str, (i32, u32, u32)); 4] = [
        ("104 cm", "waist", "104 cm", (2025, 7, 7)),
        ("96 cm", "waist", "96 cm", (2025, 10, 20)),
        ("95 cm", "waist", "95 cm", (2025, 11, 3)),
        ("80 kg", "weight", "80 kg", (2025, 11, 3)),
    ];
    let heuristic = HeuristicChat::new();
    let chat = FnChat::new(move |req| match req.schema() {
        Some(schema::SCENE_SUMMARY) => {
            let body = req.prompt.split_once(EPISODE_HEADER).map_or("", |(_, b)| b);
            let body = body.rsplit_once("\n\nSummary:").map_or(body, |(b, _)| b);
            Ok(body
                .split(EPISODE_HEADER)
                .filter_map(|chunk| chunk.split_once('\n').map(|(_, t)| t.trim().to_string()))
                .collect::<Vec<_>>()
                .join(" "))
        }
        Some(schema::PROFILE) => {
            let explicit: Vec<Value> = script
                .iter()
                .filter(|(needle, ..)| req.prompt.contains(needle))
                .map(|(_, key, value, (y, m, d))| json!({"key": key, "value": value, "timestamp": date(*y, *m, *d)}))
                .collect();
            Ok(json!({"explicit": explicit, "implicit": ["tracks health metrics"]}).to_string())
        }
        _ => heuristic.chat(req),
    });
    Providers::reference(7).with_chat(Arc::new(chat))
}
