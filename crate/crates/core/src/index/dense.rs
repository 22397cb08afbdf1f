use std::collections::HashSet;

use super::{IndexError, RankedList};
use crate::ids::FactId;

/// Exhaustive cosine scan over unit vectors stored row-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DenseIndex {
    dim: usize,
    ids: Vec<FactId>,
    seen: HashSet<FactId>,
    data: Vec<f32>,
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

impl DenseIndex {
    pub fn new(dim: usize) -> Self {
        DenseIndex { dim, ..Default::default() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[FactId] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn matrix(&self) -> &[f32] {
        &self.data
    }

    pub fn insert(&mut self, fact_id: FactId, embedding: &[f32]) -> Result<(), IndexError> {
        if self.dim == 0 && self.ids.is_empty() {
            self.dim = embedding.len();
        }
        if embedding.len() != self.dim {
            return Err(IndexError::Dimension { expected: self.dim, got: embedding.len() });
        }
        if !self.seen.insert(fact_id.clone()) {
            return Err(IndexError::DuplicateFact(fact_id));
        }
        self.ids.push(fact_id);
        self.data.extend_from_slice(embedding);
        Ok(())
    }

    pub fn search(&self, query: &[f32], top: usize) -> RankedList<FactId> {
        if self.ids.is_empty() || query.len() != self.dim {
            return RankedList::default();
        }
        let scored = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), cosine(query, self.row(i))))
            .collect();
        RankedList::from_scored(scored).truncate(top)
    }
}
