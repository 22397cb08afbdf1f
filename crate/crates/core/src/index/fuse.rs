use std::collections::HashMap;
use std::hash::Hash;

use super::RankedList;
use crate::ids::{CellId, FactId, SceneId};

/// Reciprocal rank fusion: `score(x) = Σ 1/(k + rank)`, ranks from 1.
///
/// Each item's contributions are added in ascending rank order, so the
/// result does not depend on the order of `lists` even bitwise.
pub fn rrf_fuse<T: Ord + Clone + Hash>(lists: &[RankedList<T>], rrf_k: f64) -> RankedList<T> {
    let mut ranks: HashMap<&T, Vec<usize>> = HashMap::new();
    for list in lists {
        for (i, (id, _)) in list.iter().enumerate() {
            ranks.entry(id).or_default().push(i + 1);
        }
    }
    let scored = ranks
        .into_iter()
        .map(|(id, mut rs)| {
            rs.sort_unstable();
            let s = rs.iter().fold(0.0, |acc, &r| acc + 1.0 / (rrf_k + r as f64));
            (id.clone(), s)
        })
        .collect();
    RankedList::from_scored(scored)
}

/// Lifts scores to a coarser unit by taking the max over its members.
/// Items the map does not know are skipped.
pub fn max_aggregate<A, B, F>(list: &RankedList<A>, mut parent: F) -> RankedList<B>
where
    B: Ord + Clone + Hash,
    F: FnMut(&A) -> Option<B>,
{
    let mut best: HashMap<B, f64> = HashMap::new();
    for (id, s) in list {
        let Some(p) = parent(id) else { continue };
        best.entry(p).and_modify(|b| *b = b.max(*s)).or_insert(*s);
    }
    RankedList::from_scored(best.into_iter().collect())
}

pub fn fact_to_cell_scores(fused: &RankedList<FactId>, fact_cell: &HashMap<FactId, CellId>) -> RankedList<CellId> {
    max_aggregate(fused, |f| fact_cell.get(f).cloned())
}

pub fn scene_scores<F>(cell_scores: &RankedList<CellId>, scene_of: F) -> RankedList<SceneId>
where
    F: FnMut(&CellId) -> Option<SceneId>,
{
    max_aggregate(cell_scores, scene_of)
}
