use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::Stage;
use crate::text::whitespace_token_count;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderUsage {
    pub stage_label: String,
    pub calls: u64,
    pub prompt_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Default)]
struct Counters {
    calls: AtomicU64,
    prompt_tokens: AtomicU64,
    total_tokens: AtomicU64,
}

/// Monotone call and token counters, partitioned by [`Stage`].
///
/// Tokens are whitespace tokens; the counts are indicative, not model-exact.
#[derive(Debug, Default)]
pub struct UsageMeter {
    stages: [Counters; 4],
}

impl UsageMeter {
    fn slot(&self, stage: Stage) -> &Counters {
        &self.stages[stage as usize]
    }

    pub fn record(&self, stage: Stage, prompt_tokens: u64, total_tokens: u64) {
        let c = self.slot(stage);
        c.calls.fetch_add(1, Ordering::Relaxed);
        c.prompt_tokens.fetch_add(prompt_tokens, Ordering::Relaxed);
        c.total_tokens
            .fetch_add(total_tokens.max(prompt_tokens), Ordering::Relaxed);
    }

    pub fn record_text(&self, stage: Stage, prompt: &str, reply: &str) {
        let p = whitespace_token_count(prompt) as u64;
        self.record(stage, p, p + whitespace_token_count(reply) as u64);
    }

    pub fn get(&self, stage: Stage) -> ProviderUsage {
        let c = self.slot(stage);
        ProviderUsage {
            stage_label: stage.label().to_string(),
            calls: c.calls.load(Ordering::Relaxed),
            prompt_tokens: c.prompt_tokens.load(Ordering::Relaxed),
            total_tokens: c.total_tokens.load(Ordering::Relaxed),
        }
    }

    pub fn snapshot(&self) -> Vec<ProviderUsage> {
        Stage::ALL.iter().map(|&s| self.get(s)).collect()
    }
}
