use std::collections::HashSet;

use super::{sort_scored, ProviderError, ProviderResult, Reranker};
use crate::text::{content_tokens, tokenize};

/// Scores candidates by token-overlap F1 against the query.
///
/// Stopwords are dropped from both sides unless that would leave the query empty.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenF1Reranker;

fn token_set(text: &str, keep_stopwords: bool) -> HashSet<String> {
    if keep_stopwords {
        tokenize(text).into_iter().collect()
    } else {
        content_tokens(text).into_iter().collect()
    }
}

pub fn token_f1(query: &str, candidate: &str) -> f64 {
    let keep = content_tokens(query).is_empty();
    let q = token_set(query, keep);
    let c = token_set(candidate, keep);
    if q.is_empty() || c.is_empty() {
        return 0.0;
    }
    let overlap = q.intersection(&c).count() as f64;
    if overlap == 0.0 {
        return 0.0;
    }
    let precision = overlap / c.len() as f64;
    let recall = overlap / q.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

impl Reranker for TokenF1Reranker {
    fn rerank(&self, query: &str, candidates: &[String]) -> ProviderResult<Vec<(usize, f64)>> {
        if candidates.is_empty() {
            return Err(ProviderError::Usage("rerank requires at least one candidate".into()));
        }
        let mut scored: Vec<(usize, f64)> = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (i, token_f1(query, c)))
            .collect();
        sort_scored(&mut scored);
        Ok(scored)
    }
}
