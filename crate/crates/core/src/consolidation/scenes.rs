use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{ConsolidationConfig, ConsolidationError};
use crate::ids::{CellId, IdGen, SceneId};
use crate::time::{Timestamp, SECONDS_PER_DAY};
use crate::types::{MemCell, MemScene};

/// Where a cell goes: an existing scene or a fresh one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SceneTarget {
    Existing(SceneId),
    New,
}

impl fmt::Display for SceneTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SceneTarget::Existing(id) => f.write_str(id.as_str()),
            SceneTarget::New => f.write_str("new"),
        }
    }
}

impl Serialize for SceneTarget {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SceneTarget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == "new" { SceneTarget::New } else { SceneTarget::Existing(SceneId(s)) })
    }
}

/// The outcome of comparing one cell against every scene centroid.
///
/// `revision` is the collection revision the decision was computed against;
/// applying it to a different revision is a conflict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentDecision {
    pub cell_id: CellId,
    pub target: SceneTarget,
    /// Cosine to the chosen scene, or to the nearest centroid when the target is new
    /// (0 when there are no scenes).
    pub similarity: f64,
    pub gap_rejections: Vec<SceneId>,
    pub revision: u64,
}

#[derive(Debug, Clone, Default)]
struct SceneState {
    /// Running sum of member embeddings; the centroid is its normalization.
    sum: Vec<f64>,
    /// Member event times, sorted ascending.
    times: Vec<Timestamp>,
}

/// The scene collection of one memory space.
#[derive(Debug, Clone, Default)]
pub struct SceneSet {
    scenes: Vec<MemScene>,
    state: Vec<SceneState>,
    by_id: HashMap<SceneId, usize>,
    cell_scene: HashMap<CellId, SceneId>,
}

impl PartialEq for SceneSet {
    fn eq(&self, other: &Self) -> bool {
        self.scenes == other.scenes
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

fn normalized(sum: &[f64]) -> Vec<f32> {
    let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return sum.iter().map(|_| 0.0).collect();
    }
    sum.iter().map(|x| (x / norm) as f32).collect()
}

impl SceneSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds the collection from persisted scenes and the cells they reference.
    pub fn from_scenes(
        scenes: Vec<MemScene>,
        cells: &HashMap<CellId, &MemCell>,
    ) -> Result<Self, ConsolidationError> {
        let mut set = SceneSet::new();
        for scene in scenes {
            let mut st = SceneState::default();
            for id in &scene.member_ids {
                let cell = cells
                    .get(id)
                    .ok_or_else(|| ConsolidationError::UnknownCell(id.clone()))?;
                add_to_sum(&mut st.sum, &cell.embedding);
                insert_sorted(&mut st.times, cell.event_time());
                if set.cell_scene.insert(id.clone(), scene.scene_id.clone()).is_some() {
                    return Err(ConsolidationError::DuplicateMember(id.clone()));
                }
            }
            set.by_id.insert(scene.scene_id.clone(), set.scenes.len());
            set.scenes.push(scene);
            set.state.push(st);
        }
        Ok(set)
    }

    pub fn scenes(&self) -> &[MemScene] {
        &self.scenes
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn get(&self, id: &SceneId) -> Option<&MemScene> {
        self.by_id.get(id).map(|&i| &self.scenes[i])
    }

    pub fn scene_of(&self, cell: &CellId) -> Option<&SceneId> {
        self.cell_scene.get(cell)
    }

    /// Number of assigned cells; bumps by exactly one per applied decision.
    pub fn revision(&self) -> u64 {
        self.cell_scene.len() as u64
    }

    pub fn set_summary(&mut self, id: &SceneId, summary: String) -> Result<(), ConsolidationError> {
        let i = *self
            .by_id
            .get(id)
            .ok_or_else(|| ConsolidationError::UnknownScene(id.clone()))?;
        self.scenes[i].summary = summary;
        Ok(())
    }

    fn closest_gap(&self, idx: usize, t: Timestamp) -> u64 {
        let times = &self.state[idx].times;
        let pos = times.partition_point(|x| *x < t);
        let mut best = u64::MAX;
        if pos < times.len() {
            best = best.min(times[pos].abs_diff(t));
        }
        if pos > 0 {
            best = best.min(times[pos - 1].abs_diff(t));
        }
        best
    }
}

fn add_to_sum(sum: &mut Vec<f64>, v: &[f32]) {
    if sum.is_empty() {
        sum.resize(v.len(), 0.0);
    }
    for (s, x) in sum.iter_mut().zip(v) {
        *s += f64::from(*x);
    }
}

fn insert_sorted(times: &mut Vec<Timestamp>, t: Timestamp) {
    let pos = times.partition_point(|x| *x <= t);
    times.insert(pos, t);
}

/// Picks the most similar scene whose centroid clears `tau` and whose
/// closest-in-time member lies within the gap limit; otherwise "new".
///
/// Candidates are tried in descending similarity, ties toward the later
/// `latest_event`, then the lower scene id.
pub fn assign_to_scene(cell: &MemCell, scenes: &SceneSet, cfg: &ConsolidationConfig) -> AssignmentDecision {
    let mut scored: Vec<(usize, f64)> = scenes
        .scenes
        .iter()
        .enumerate()
        .map(|(i, s)| (i, dot(&cell.embedding, &s.centroid)))
        .collect();
    scored.sort_by(|a, b| {
        let (sa, sb) = (&scenes.scenes[a.0], &scenes.scenes[b.0]);
        b.1.total_cmp(&a.1)
            .then(sb.latest_event.cmp(&sa.latest_event))
            .then(sa.scene_id.cmp(&sb.scene_id))
    });
    let max_gap = u64::from(cfg.max_time_gap_days) * SECONDS_PER_DAY as u64;
    let mut gap_rejections = Vec::new();
    for &(i, sim) in scored.iter().take_while(|(_, sim)| *sim >= cfg.tau) {
        if scenes.closest_gap(i, cell.event_time()) <= max_gap {
            return AssignmentDecision {
                cell_id: cell.cell_id.clone(),
                target: SceneTarget::Existing(scenes.scenes[i].scene_id.clone()),
                similarity: sim,
                gap_rejections,
                revision: scenes.revision(),
            };
        }
        gap_rejections.push(scenes.scenes[i].scene_id.clone());
    }
    AssignmentDecision {
        cell_id: cell.cell_id.clone(),
        target: SceneTarget::New,
        similarity: scored.first().map_or(0.0, |s| s.1),
        gap_rejections,
        revision: scenes.revision(),
    }
}

/// Applies a decision, returning the id of the scene that received the cell.
///
/// For a new scene the id comes from `ids` unless `new_scene_id` pins it (replay).
pub fn apply_assignment(
    decision: &AssignmentDecision,
    cell: &MemCell,
    scenes: &mut SceneSet,
    ids: &mut IdGen,
    new_scene_id: Option<SceneId>,
) -> Result<SceneId, ConsolidationError> {
    if decision.cell_id != cell.cell_id {
        return Err(ConsolidationError::Conflict(format!(
            "decision is for {} but cell is {}",
            decision.cell_id, cell.cell_id
        )));
    }
    if decision.revision != scenes.revision() {
        return Err(ConsolidationError::Conflict(format!(
            "stale decision: computed at revision {}, collection is at {}",
            decision.revision,
            scenes.revision()
        )));
    }
    if let Some(existing) = scenes.cell_scene.get(&cell.cell_id) {
        return Err(ConsolidationError::Conflict(format!(
            "{} already belongs to {existing}",
            cell.cell_id
        )));
    }
    let t = cell.event_time();
    let scene_id = match &decision.target {
        SceneTarget::Existing(id) => {
            let i = *scenes
                .by_id
                .get(id)
                .ok_or_else(|| ConsolidationError::UnknownScene(id.clone()))?;
            let st = &mut scenes.state[i];
            add_to_sum(&mut st.sum, &cell.embedding);
            insert_sorted(&mut st.times, t);
            let scene = &mut scenes.scenes[i];
            scene.member_ids.push(cell.cell_id.clone());
            scene.centroid = normalized(&st.sum);
            scene.earliest_event = scene.earliest_event.min(t);
            scene.latest_event = scene.latest_event.max(t);
            id.clone()
        }
        SceneTarget::New => {
            let id = match new_scene_id {
                Some(id) => {
                    ids.observe(id.as_str());
                    id
                }
                None => ids.next_scene(),
            };
            if scenes.by_id.contains_key(&id) {
                return Err(ConsolidationError::Conflict(format!("scene {id} already exists")));
            }
            let mut st = SceneState::default();
            add_to_sum(&mut st.sum, &cell.embedding);
            st.times.push(t);
            scenes.by_id.insert(id.clone(), scenes.scenes.len());
            scenes.scenes.push(MemScene {
                scene_id: id.clone(),
                member_ids: vec![cell.cell_id.clone()],
                centroid: cell.embedding.clone(),
                summary: String::new(),
                earliest_event: t,
                latest_event: t,
            });
            scenes.state.push(st);
            id
        }
    };
    scenes.cell_scene.insert(cell.cell_id.clone(), scene_id.clone());
    Ok(scene_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::CellMetadata;
    use std::collections::BTreeMap;

    const DAY: i64 = SECONDS_PER_DAY;

    fn cell(id: &str, emb: Vec<f32>, t: i64) -> MemCell {
        MemCell {
            cell_id: id.into(),
            episode: "e".into(),
            facts: vec![],
            foresight: vec![],
            metadata: CellMetadata {
                event_time: Timestamp::from_unix(t),
                source_turn_ids: vec![],
                user_id: "u".into(),
                extra: BTreeMap::new(),
            },
            embedding: emb,
        }
    }

    /// Unit vector in 3-d with cosine `c` to e1.
    fn at_cos(c: f32) -> Vec<f32> {
        vec![c, (1.0 - c * c).sqrt(), 0.0]
    }

    fn cfg() -> ConsolidationConfig {
        ConsolidationConfig { tau: 0.70, max_time_gap_days: 7 }
    }

    fn seeded(emb: Vec<f32>, t: i64) -> (SceneSet, IdGen) {
        let mut set = SceneSet::new();
        let mut ids = IdGen::default();
        let c = cell("cell_000001", emb, t);
        let d = assign_to_scene(&c, &set, &cfg());
        apply_assignment(&d, &c, &mut set, &mut ids, None).unwrap();
        (set, ids)
    }

    #[test]
    fn empty_collection_means_new() {
        let d = assign_to_scene(&cell("c", vec![1.0, 0.0, 0.0], 0), &SceneSet::new(), &cfg());
        assert_eq!(d.target, SceneTarget::New);
    }

    #[test]
    fn assimilates_above_tau_within_gap() {
        let (set, _) = seeded(vec![1.0, 0.0, 0.0], 0);
        let d = assign_to_scene(&cell("c2", at_cos(0.75), 2 * DAY), &set, &cfg());
        assert_eq!(d.target, SceneTarget::Existing("scene_000001".into()));
        assert!((d.similarity - 0.75).abs() < 1e-6);
    }

    #[test]
    fn below_tau_means_new() {
        let (set, _) = seeded(vec![1.0, 0.0, 0.0], 0);
        let d = assign_to_scene(&cell("c2", at_cos(0.65), DAY), &set, &cfg());
        assert_eq!(d.target, SceneTarget::New);
        assert!(d.gap_rejections.is_empty());
    }

    #[test]
    fn gap_rule_rejects_distant_scene() {
        let (set, _) = seeded(vec![1.0, 0.0, 0.0], 0);
        let d = assign_to_scene(&cell("c2", at_cos(0.80), 10 * DAY), &set, &cfg());
        assert_eq!(d.target, SceneTarget::New);
        assert_eq!(d.gap_rejections, vec![SceneId::from("scene_000001")]);
        // exactly at the limit is allowed
        let d = assign_to_scene(&cell("c2", at_cos(0.80), 7 * DAY), &set, &cfg());
        assert!(matches!(d.target, SceneTarget::Existing(_)));
    }

    #[test]
    fn gap_rejection_falls_through_to_next_candidate() {
        let mut set = SceneSet::new();
        let mut ids = IdGen::default();
        let a = cell("cell_a", vec![1.0, 0.0, 0.0], 0);
        let d = assign_to_scene(&a, &set, &cfg());
        apply_assignment(&d, &a, &mut set, &mut ids, None).unwrap();
        let b = cell("cell_b", vec![0.0, 1.0, 0.0], 20 * DAY);
        let d = assign_to_scene(&b, &set, &cfg());
        apply_assignment(&d, &b, &mut set, &mut ids, None).unwrap();
        assert_eq!(set.len(), 2);
        // closer to scene 1 by angle, but only scene 2 is within the gap
        let c = cell("cell_c", vec![0.8, 0.6, 0.0], 21 * DAY);
        let sim_b = 0.6f64;
        let d = assign_to_scene(&c, &set, &ConsolidationConfig { tau: 0.5, max_time_gap_days: 7 });
        assert_eq!(d.target, SceneTarget::Existing("scene_000002".into()));
        assert_eq!(d.gap_rejections, vec![SceneId::from("scene_000001")]);
        assert!((d.similarity - sim_b).abs() < 1e-6);
    }

    #[test]
    fn similarity_ties_prefer_later_scene() {
        let mut set = SceneSet::new();
        let mut ids = IdGen::default();
        for (id, t) in [("cell_a", 0), ("cell_b", DAY)] {
            let c = cell(id, vec![1.0, 0.0, 0.0], t);
            // force two separate scenes with identical centroids
            let d = AssignmentDecision {
                cell_id: c.cell_id.clone(),
                target: SceneTarget::New,
                similarity: 0.0,
                gap_rejections: vec![],
                revision: set.revision(),
            };
            apply_assignment(&d, &c, &mut set, &mut ids, None).unwrap();
        }
        let d = assign_to_scene(&cell("c", vec![1.0, 0.0, 0.0], 2 * DAY), &set, &cfg());
        assert_eq!(d.target, SceneTarget::Existing("scene_000002".into()));
    }

    #[test]
    fn first_member_centroid_is_exact() {
        let e = vec![0.6f32, 0.0, 0.8];
        let (set, _) = seeded(e.clone(), 0);
        assert_eq!(set.scenes()[0].centroid, e);
    }

    #[test]
    fn orthogonal_pair_centroid() {
        let (mut set, mut ids) = seeded(vec![1.0, 0.0, 0.0], 0);
        let c = cell("cell_000002", vec![0.0, 1.0, 0.0], DAY);
        let d = AssignmentDecision {
            cell_id: c.cell_id.clone(),
            target: SceneTarget::Existing("scene_000001".into()),
            similarity: 0.0,
            gap_rejections: vec![],
            revision: set.revision(),
        };
        apply_assignment(&d, &c, &mut set, &mut ids, None).unwrap();
        let s = &set.scenes()[0];
        // (e1 + e2) / sqrt(2)
        assert!((s.centroid[0] - 0.70711).abs() < 1e-5);
        assert!((s.centroid[1] - 0.70711).abs() < 1e-5);
        assert_eq!(s.centroid[2], 0.0);
        assert_eq!(s.member_ids.len(), 2);
        assert_eq!((s.earliest_event.unix(), s.latest_event.unix()), (0, DAY));
    }

    #[test]
    fn stale_decision_conflicts() {
        let (mut set, mut ids) = seeded(vec![1.0, 0.0, 0.0], 0);
        let c2 = cell("cell_000002", vec![0.0, 1.0, 0.0], 0);
        let c3 = cell("cell_000003", vec![0.0, 0.0, 1.0], 0);
        let d2 = assign_to_scene(&c2, &set, &cfg());
        let d3 = assign_to_scene(&c3, &set, &cfg());
        apply_assignment(&d2, &c2, &mut set, &mut ids, None).unwrap();
        let err = apply_assignment(&d3, &c3, &mut set, &mut ids, None).unwrap_err();
        assert!(matches!(err, ConsolidationError::Conflict(_)));
        let before = set.scenes().to_vec();
        assert_eq!(set.scenes(), &before[..]);
    }

    #[test]
    fn decision_json_uses_new_sentinel() {
        let d = AssignmentDecision {
            cell_id: "c".into(),
            target: SceneTarget::New,
            similarity: 0.5,
            gap_rejections: vec![],
            revision: 3,
        };
        let v = serde_json::to_value(&d).unwrap();
        assert_eq!(v["target"], "new");
        let back: AssignmentDecision = serde_json::from_value(v).unwrap();
        assert_eq!(back, d);
    }
}
