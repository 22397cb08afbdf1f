//! Domain types shared across the memory lifecycle, with their invariant checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::{CellId, FactId, ForesightId, SceneId, TurnId};
use crate::time::Timestamp;

/// Tolerance for unit-norm checks on embeddings and centroids.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// One timestamped, speaker-attributed utterance from the raw stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub turn_id: TurnId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub speaker: String,
    pub content: String,
    pub timestamp: Timestamp,
}

impl DialogueTurn {
    pub fn new(
        turn_id: impl Into<String>,
        speaker: impl Into<String>,
        content: impl Into<String>,
        timestamp: Timestamp,
    ) -> Self {
        Self {
            turn_id: TurnId(turn_id.into()),
            session_id: None,
            speaker: speaker.into(),
            content: content.into(),
            timestamp,
        }
    }

    pub fn with_session(mut self, session: impl Into<String>) -> Self {
        self.session_id = Some(session.into());
        self
    }
}

/// Checks the stream-level invariants: non-empty content and non-decreasing time.
pub fn validate_turns(turns: &[DialogueTurn]) -> Vec<String> {
    let mut out = Vec::new();
    for (i, t) in turns.iter().enumerate() {
        if t.content.trim().is_empty() {
            out.push(format!("turn {} ({}) has empty content", i, t.turn_id));
        }
        if i > 0 && t.timestamp < turns[i - 1].timestamp {
            out.push(format!("turn {} ({}) is earlier than its predecessor", i, t.turn_id));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicFact {
    pub fact_id: FactId,
    pub text: String,
    pub source_cell: CellId,
}

/// A forward-looking inference valid over a closed interval.
///
/// `valid_until = None` is the open-ended sentinel (serialized as `null`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Foresight {
    pub foresight_id: ForesightId,
    pub text: String,
    pub valid_from: Timestamp,
    pub valid_until: Option<Timestamp>,
    pub source_cell: CellId,
}

impl Foresight {
    pub fn interval_ok(&self) -> bool {
        self.valid_until.map_or(true, |until| self.valid_from <= until)
    }
}

/// True iff `t_now` lies in `[valid_from, valid_until]`, both ends inclusive.
pub fn foresight_is_valid(f: &Foresight, t_now: Timestamp) -> bool {
    f.valid_from <= t_now && f.valid_until.map_or(true, |until| t_now <= until)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetadata {
    pub event_time: Timestamp,
    pub source_turn_ids: Vec<TurnId>,
    pub user_id: String,
    /// Additional free-form metadata.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// The atomic memory unit: episode, facts, foresight, metadata, plus the
/// episode embedding used for scene clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemCell {
    pub cell_id: CellId,
    pub episode: String,
    pub facts: Vec<AtomicFact>,
    pub foresight: Vec<Foresight>,
    pub metadata: CellMetadata,
    pub embedding: Vec<f32>,
}

impl MemCell {
    pub fn event_time(&self) -> Timestamp {
        self.metadata.event_time
    }
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

pub fn is_unit(v: &[f32]) -> bool {
    !v.is_empty() && (l2_norm(v) - 1.0).abs() <= UNIT_NORM_TOLERANCE
}

/// Returns one description per violated invariant; empty when the cell is well-formed.
pub fn validate_memcell(cell: &MemCell) -> Vec<String> {
    let mut out = Vec::new();
    if cell.episode.trim().is_empty() {
        out.push("episode must be non-empty".to_string());
    }
    if cell.facts.is_empty() {
        out.push("facts must be non-empty".to_string());
    }
    if !is_unit(&cell.embedding) {
        out.push("embedding not unit-norm".to_string());
    }
    if cell.facts.iter().any(|f| f.source_cell != cell.cell_id)
        || cell.foresight.iter().any(|f| f.source_cell != cell.cell_id)
    {
        out.push("source_cell must equal cell_id".to_string());
    }
    if cell
        .facts
        .iter()
        .any(|f| f.text.trim().is_empty() || f.text.contains('?'))
    {
        out.push("facts must be non-empty declarative statements".to_string());
    }
    if cell.foresight.iter().any(|f| !f.interval_ok()) {
        out.push("foresight interval has valid_from after valid_until".to_string());
    }
    if cell.metadata.user_id.is_empty() {
        out.push("metadata.user_id must be non-empty".to_string());
    }
    out
}

/// A thematic cluster of cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemScene {
    pub scene_id: SceneId,
    pub member_ids: Vec<CellId>,
    pub centroid: Vec<f32>,
    pub summary: String,
    pub earliest_event: Timestamp,
    pub latest_event: Timestamp,
}

/// A value observed at a point in time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub value: String,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplicitFact {
    pub key: String,
    pub baseline: Observation,
    pub latest: Observation,
    #[serde(default)]
    pub delta: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImplicitTrait {
    #[serde(rename = "trait")]
    pub trait_text: String,
    pub evidence_scene_ids: Vec<SceneId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileConflict {
    pub key: String,
    pub value_a: Observation,
    pub value_b: Observation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub explicit_facts: Vec<ExplicitFact>,
    pub implicit_traits: Vec<ImplicitTrait>,
    pub conflicts: Vec<ProfileConflict>,
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            explicit_facts: Vec::new(),
            implicit_traits: Vec::new(),
            conflicts: Vec::new(),
        }
    }

    pub fn fact(&self, key: &str) -> Option<&ExplicitFact> {
        self.explicit_facts.iter().find(|f| f.key == key)
    }

    pub fn is_empty(&self) -> bool {
        self.explicit_facts.is_empty() && self.implicit_traits.is_empty()
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for f in &self.explicit_facts {
            if !seen.insert(f.key.as_str()) {
                out.push(format!("explicit fact key {:?} appears more than once", f.key));
            }
            if f.latest.timestamp < f.baseline.timestamp {
                out.push(format!("explicit fact {:?} has latest before baseline", f.key));
            }
        }
        out
    }
}

/// Which episodes the sufficiency verifier is shown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierScope {
    /// The top-K selected episodes.
    #[default]
    Selected,
    /// Every pooled candidate from the selected scenes.
    Pool,
}

fn default_fact_candidates() -> usize {
    100
}

/// Retrieval and consolidation knobs for one memory space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub scene_top_n: usize,
    pub episode_top_k: usize,
    pub rrf_k: f64,
    pub max_rounds: usize,
    pub tau: f64,
    pub max_time_gap_days: u32,
    /// Depth of each per-query lexical and dense fact search before fusion.
    #[serde(default = "default_fact_candidates")]
    pub fact_candidates: usize,
    #[serde(default)]
    pub verifier_scope: VerifierScope,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            scene_top_n: 10,
            episode_top_k: 10,
            rrf_k: 60.0,
            max_rounds: 2,
            tau: 0.70,
            max_time_gap_days: 7,
            fact_candidates: default_fact_candidates(),
            verifier_scope: VerifierScope::Selected,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.scene_top_n < 1 {
            out.push("scene_top_n must be >= 1".to_string());
        }
        if self.episode_top_k < 1 {
            out.push("episode_top_k must be >= 1".to_string());
        }
        if self.max_rounds < 1 {
            out.push("max_rounds must be >= 1".to_string());
        }
        if !(self.rrf_k > 0.0 && self.rrf_k.is_finite()) {
            out.push("rrf_k must be a positive real".to_string());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            out.push("tau must lie in (0, 1]".to_string());
        }
        if self.max_time_gap_days < 1 {
            out.push("max_time_gap_days must be >= 1".to_string());
        }
        if self.fact_candidates < 1 {
            out.push("fact_candidates must be >= 1".to_string());
        }
        out
    }

    pub fn consolidation(&self) -> crate::consolidation::ConsolidationConfig {
        crate::consolidation::ConsolidationConfig {
            tau: self.tau,
            max_time_gap_days: self.max_time_gap_days,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize, axis: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    }

    fn cell() -> MemCell {
        let id = CellId::from("cell_000001");
        MemCell {
            cell_id: id.clone(),
            episode: "Caroline went to a support group.".into(),
            facts: vec![
                AtomicFact {
                    fact_id: "fact_000001".into(),
                    text: "Caroline attended a support group.".into(),
                    source_cell: id.clone(),
                },
                AtomicFact {
                    fact_id: "fact_000002".into(),
                    text: "The group met on Monday.".into(),
                    source_cell: id.clone(),
                },
            ],
            foresight: vec![],
            metadata: CellMetadata {
                event_time: Timestamp::from_unix(100),
                source_turn_ids: vec!["t1".into()],
                user_id: "u".into(),
                extra: BTreeMap::new(),
            },
            embedding: unit(8, 3),
        }
    }

    fn fs(from: i64, until: Option<i64>) -> Foresight {
        Foresight {
            foresight_id: "foresight_000001".into(),
            text: "x".into(),
            valid_from: Timestamp::from_unix(from),
            valid_until: until.map(Timestamp::from_unix),
            source_cell: "cell_000001".into(),
        }
    }

    #[test]
    fn well_formed_cell_has_no_violations() {
        assert!(validate_memcell(&cell()).is_empty());
    }

    #[test]
    fn empty_facts_is_reported() {
        let mut c = cell();
        c.facts.clear();
        assert_eq!(validate_memcell(&c), vec!["facts must be non-empty"]);
    }

    #[test]
    fn non_unit_embedding_is_reported() {
        let mut c = cell();
        // norm of (1.5, 0, ...) is 1.5
        c.embedding = vec![0.0; 8];
        c.embedding[0] = 1.5;
        assert!((l2_norm(&c.embedding) - 1.5).abs() < 1e-12);
        assert_eq!(validate_memcell(&c), vec!["embedding not unit-norm"]);
    }

    #[test]
    fn foreign_source_cell_is_reported() {
        let mut c = cell();
        c.facts[1].source_cell = "cell_000009".into();
        assert_eq!(validate_memcell(&c), vec!["source_cell must equal cell_id"]);
    }

    #[test]
    fn foresight_interval_is_closed() {
        let f = fs(10, Some(20));
        assert!(foresight_is_valid(&f, Timestamp::from_unix(15)));
        assert!(!foresight_is_valid(&f, Timestamp::from_unix(25)));
        assert!(foresight_is_valid(&f, Timestamp::from_unix(20)));
        assert!(foresight_is_valid(&f, Timestamp::from_unix(10)));
        assert!(!foresight_is_valid(&f, Timestamp::from_unix(9)));
    }

    #[test]
    fn open_ended_foresight_never_expires() {
        let f = fs(10, None);
        assert!(foresight_is_valid(&f, Timestamp::from_unix(i64::MAX / 4)));
        assert!(!foresight_is_valid(&f, Timestamp::from_unix(9)));
        let json = serde_json::to_value(&f).unwrap();
        assert!(json["valid_until"].is_null());
    }

    #[test]
    fn profile_key_uniqueness_is_checked() {
        let obs = Observation { value: "80 kg".into(), timestamp: Timestamp::from_unix(1) };
        let fact = ExplicitFact {
            key: "weight".into(),
            baseline: obs.clone(),
            latest: obs,
            delta: None,
        };
        let mut p = UserProfile::new("u");
        p.explicit_facts = vec![fact.clone(), fact];
        assert_eq!(p.validate().len(), 1);
    }

    #[test]
    fn default_config_is_valid() {
        let c = RetrievalConfig::default();
        assert!(c.validate().is_empty());
        assert_eq!((c.scene_top_n, c.episode_top_k, c.max_rounds), (10, 10, 2));
        let bad = RetrievalConfig { tau: 0.0, max_rounds: 0, ..c };
        assert_eq!(bad.validate().len(), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn validity_is_convex(from in -1000i64..1000, len in 0i64..1000, open: bool,
                                  a in -3000i64..3000, b in -3000i64..3000) {
                let f = fs(from, if open { None } else { Some(from + len) });
                let (t1, t2) = (a.min(b), a.max(b));
                if foresight_is_valid(&f, Timestamp::from_unix(t1)) && foresight_is_valid(&f, Timestamp::from_unix(t2)) {
                    let mid = t1 + (t2 - t1) / 2;
                    prop_assert!(foresight_is_valid(&f, Timestamp::from_unix(mid)));
                }
            }
        }
    }
}
