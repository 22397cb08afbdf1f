use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ConsolidationError;
use crate::ids::SceneId;
use crate::prompts::{self, schema};
use crate::providers::{ChatRequest, Providers, Stage};
use crate::time::Timestamp;
use crate::trace::strip_fence;
use crate::types::{ExplicitFact, ImplicitTrait, MemScene, Observation, ProfileConflict, UserProfile};

/// One explicit observation as returned by the profile extractor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedFact {
    pub key: String,
    pub value: String,
    #[serde(default)]
    pub timestamp: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProfileExtraction {
    #[serde(default)]
    pub explicit: Vec<ExtractedFact>,
    #[serde(default)]
    pub implicit: Vec<String>,
}

pub fn parse_profile_reply(raw: &str) -> Result<ProfileExtraction, ConsolidationError> {
    serde_json::from_str(strip_fence(raw)).map_err(|e| ConsolidationError::ProfileParse {
        message: e.to_string(),
        raw: raw.to_string(),
    })
}

static NUMERIC: OnceLock<Regex> = OnceLock::new();

/// Splits `"104 cm"` into `(104.0, "cm")`; `None` for non-numeric values.
pub fn parse_measure(value: &str) -> Option<(f64, String)> {
    let re = NUMERIC.get_or_init(|| {
        Regex::new(r"^\s*([+-]?\d+(?:\.\d+)?)\s*([^\d\s][^\d]*)?$").expect("static regex")
    });
    let c = re.captures(value)?;
    let n: f64 = c[1].parse().ok()?;
    let unit = c.get(2).map_or("", |m| m.as_str()).trim().to_string();
    Some((n, unit))
}

fn format_number(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        let s = format!("{x:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Signed difference `latest - baseline` with the shared unit, e.g. `-9 cm`.
pub fn measure_delta(baseline: &str, latest: &str) -> Option<String> {
    let (b, bu) = parse_measure(baseline)?;
    let (l, lu) = parse_measure(latest)?;
    if !bu.eq_ignore_ascii_case(&lu) {
        return None;
    }
    let d = l - b;
    let num = if d > 0.0 { format!("+{}", format_number(d)) } else { format_number(d) };
    Some(if lu.is_empty() { num } else { format!("{num} {lu}") })
}

fn normalize_key(key: &str) -> String {
    key.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Folds extracted observations into a profile.
///
/// - unseen key: inserted with baseline = latest;
/// - later than `latest`: becomes latest, baseline kept, delta recomputed;
/// - same instant as `latest` with a different value: logged as a conflict, latest kept;
/// - earlier than `baseline`: becomes the new baseline;
/// - otherwise: stale, ignored.
///
/// Implicit traits are set-unioned; `scene_id` is appended to their evidence.
pub fn merge_profile(
    profile: &UserProfile,
    extraction: &ProfileExtraction,
    scene_id: &SceneId,
    default_time: Timestamp,
) -> UserProfile {
    let mut out = profile.clone();
    for item in &extraction.explicit {
        let key = normalize_key(&item.key);
        let value = item.value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            continue;
        }
        let obs = Observation { value, timestamp: item.timestamp.unwrap_or(default_time) };
        let Some(fact) = out.explicit_facts.iter_mut().find(|f| f.key == key) else {
            out.explicit_facts.push(ExplicitFact {
                key,
                baseline: obs.clone(),
                latest: obs,
                delta: None,
            });
            continue;
        };
        if obs.timestamp > fact.latest.timestamp {
            fact.latest = obs;
        } else if obs.timestamp == fact.latest.timestamp {
            if obs.value != fact.latest.value {
                let conflict = ProfileConflict {
                    key: key.clone(),
                    value_a: fact.latest.clone(),
                    value_b: obs,
                };
                if !out.conflicts.contains(&conflict) {
                    out.conflicts.push(conflict);
                }
            }
            continue;
        } else if obs.timestamp < fact.baseline.timestamp {
            fact.baseline = obs;
        } else {
            tracing::debug!(key = %key, "ignoring stale profile observation");
            continue;
        }
        fact.delta = measure_delta(&fact.baseline.value, &fact.latest.value);
    }
    for t in &extraction.implicit {
        let t = t.trim();
        if t.is_empty() {
            continue;
        }
        match out.implicit_traits.iter_mut().find(|x| x.trait_text == t) {
            Some(existing) => {
                if !existing.evidence_scene_ids.contains(scene_id) {
                    existing.evidence_scene_ids.push(scene_id.clone());
                }
            }
            None => out.implicit_traits.push(ImplicitTrait {
                trait_text: t.to_string(),
                evidence_scene_ids: vec![scene_id.clone()],
            }),
        }
    }
    out
}

/// Prompts over scene summaries and merges the reply into the profile.
///
/// Returns the merged profile and the parsed extraction (kept for replay).
/// On failure the caller's profile is untouched.
pub fn update_profile(
    profile: &UserProfile,
    scene: &MemScene,
    summaries: &[String],
    providers: &Providers,
) -> Result<(UserProfile, ProfileExtraction), ConsolidationError> {
    let prompt = prompts::profile_prompt(scene.earliest_event, scene.latest_event, summaries);
    let reply = providers
        .chat(&ChatRequest::new(prompt, schema::PROFILE, Stage::Add))
        .map_err(ConsolidationError::Provider)?;
    let extraction = parse_profile_reply(&reply)?;
    Ok((merge_profile(profile, &extraction, &scene.scene_id, scene.latest_event), extraction))
}
