use std::cmp::Ordering;
use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

/// Items ordered by descending score, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankedList<T> {
    entries: Vec<(T, f64)>,
}

impl<T> Default for RankedList<T> {
    fn default() -> Self {
        RankedList { entries: Vec::new() }
    }
}

pub(crate) fn by_score_then_id<T: Ord>(a: &(T, f64), b: &(T, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

impl<T: Ord + Clone + Hash> RankedList<T> {
    /// Sorts scored items into canonical order. Ids must be unique.
    pub fn from_scored(mut entries: Vec<(T, f64)>) -> Self {
        entries.sort_by(by_score_then_id);
        debug_assert!(Self::unique(&entries), "duplicate ids in ranked list");
        RankedList { entries }
    }

    /// Wraps entries that are already ordered; `None` if they break the invariants.
    pub fn from_sorted(entries: Vec<(T, f64)>) -> Option<Self> {
        let list = RankedList { entries };
        list.is_well_formed().then_some(list)
    }

    /// Takes ids in rank order and assigns scores `n, n-1, ..., 1`.
    pub fn from_order(ids: Vec<T>) -> Self {
        let n = ids.len();
        let entries = ids.into_iter().enumerate().map(|(i, id)| (id, (n - i) as f64)).collect();
        RankedList { entries }
    }

    fn unique(entries: &[(T, f64)]) -> bool {
        let mut seen = HashSet::with_capacity(entries.len());
        entries.iter().all(|(id, _)| seen.insert(id))
    }

    pub fn is_well_formed(&self) -> bool {
        self.entries.windows(2).all(|w| w[0].1 >= w[1].1) && Self::unique(&self.entries)
    }

    pub fn truncate(mut self, n: usize) -> Self {
        self.entries.truncate(n);
        self
    }

    pub fn score_of(&self, id: &T) -> Option<f64> {
        self.entries.iter().find(|(x, _)| x == id).map(|(_, s)| *s)
    }
}

impl<T> RankedList<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(T, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> std::slice::Iter<'_, (T, f64)> {
        self.entries.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &T> + '_ {
        self.entries.iter().map(|(id, _)| id)
    }

    pub fn into_entries(self) -> Vec<(T, f64)> {
        self.entries
    }
}

impl<'a, T> IntoIterator for &'a RankedList<T> {
    type Item = &'a (T, f64);
    type IntoIter = std::slice::Iter<'a, (T, f64)>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}
