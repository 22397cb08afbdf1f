use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{IndexError, RankedList};
use crate::ids::{CellId, FactId, SceneId};
use crate::text::tokenize;

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;

/// Okapi idf with the +1 floor, so it stays positive for every df.
pub fn idf(n_docs: usize, df: usize) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactPosting {
    pub fact_id: FactId,
    pub cell_id: CellId,
    pub scene_id: Option<SceneId>,
    pub term_freqs: BTreeMap<String, u32>,
    pub length: u32,
}

impl FactPosting {
    pub fn new(fact_id: FactId, cell_id: CellId, scene_id: Option<SceneId>, text: &str) -> Self {
        let mut term_freqs = BTreeMap::new();
        let mut length = 0;
        for t in tokenize(text) {
            *term_freqs.entry(t).or_insert(0) += 1;
            length += 1;
        }
        FactPosting { fact_id, cell_id, scene_id, term_freqs, length }
    }
}

/// Incrementally built inverted index over fact texts.
#[derive(Debug, Clone, Default)]
pub struct Bm25Index {
    docs: Vec<FactPosting>,
    by_fact: HashMap<FactId, usize>,
    // term -> (doc slot, tf)
    postings: HashMap<String, Vec<(usize, u32)>>,
    total_len: u64,
}

impl Bm25Index {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[FactPosting] {
        &self.docs
    }

    pub fn posting(&self, fact: &FactId) -> Option<&FactPosting> {
        self.by_fact.get(fact).map(|&i| &self.docs[i])
    }

    pub fn avgdl(&self) -> f64 {
        if self.docs.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.docs.len() as f64
        }
    }

    pub fn insert(&mut self, posting: FactPosting) -> Result<(), IndexError> {
        if self.by_fact.contains_key(&posting.fact_id) {
            return Err(IndexError::DuplicateFact(posting.fact_id));
        }
        let slot = self.docs.len();
        for (term, &tf) in &posting.term_freqs {
            self.postings.entry(term.clone()).or_default().push((slot, tf));
        }
        self.total_len += u64::from(posting.length);
        self.by_fact.insert(posting.fact_id.clone(), slot);
        self.docs.push(posting);
        Ok(())
    }

    pub fn insert_text(
        &mut self,
        fact_id: FactId,
        cell_id: CellId,
        scene_id: Option<SceneId>,
        text: &str,
    ) -> Result<(), IndexError> {
        self.insert(FactPosting::new(fact_id, cell_id, scene_id, text))
    }

    pub fn set_scene(&mut self, cell: &CellId, scene: &SceneId) {
        for d in self.docs.iter_mut().filter(|d| &d.cell_id == cell) {
            d.scene_id = Some(scene.clone());
        }
    }

    /// Scores every fact sharing a term with the query. Repeated query terms
    /// count once; zero-score facts are omitted.
    pub fn search(&self, query: &str, top: usize) -> RankedList<FactId> {
        let mut terms = tokenize(query);
        let mut seen = std::collections::HashSet::new();
        terms.retain(|t| seen.insert(t.clone()));
        if terms.is_empty() || self.docs.is_empty() {
            return RankedList::default();
        }
        let n = self.docs.len();
        let avgdl = self.avgdl();
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else { continue };
            let w = idf(n, list.len());
            for &(slot, tf) in list {
                let tf = f64::from(tf);
                let dl = f64::from(self.docs[slot].length);
                let part = tf * (K1 + 1.0) / (tf + K1 * (1.0 - B + B * dl / avgdl));
                *acc.entry(slot).or_insert(0.0) += w * part;
            }
        }
        let scored = acc
            .into_iter()
            .filter(|(_, s)| *s > 0.0)
            .map(|(slot, s)| (self.docs[slot].fact_id.clone(), s))
            .collect();
        RankedList::from_scored(scored).truncate(top)
    }

    /// Terms in sorted order with their postings, as stored on disk.
    pub(crate) fn inverted(&self) -> Vec<(&str, Vec<(&FactId, u32)>)> {
        let mut terms: Vec<_> = self.postings.iter().collect();
        terms.sort_by(|a, b| a.0.cmp(b.0));
        terms
            .into_iter()
            .map(|(t, list)| (t.as_str(), list.iter().map(|&(slot, tf)| (&self.docs[slot].fact_id, tf)).collect()))
            .collect()
    }
}
