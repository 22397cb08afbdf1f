//! Model-backed capabilities behind pluggable interfaces.
//!
//! The engine talks to three providers: chat (generation and extraction),
//! embedding, and reranking. Deterministic reference implementations make the
//! whole pipeline runnable offline; [`remote`] adapts OpenAI-compatible endpoints.

mod embed;
mod heuristic;
pub mod remote;
mod rerank;
mod scripted;
mod usage;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use embed::HashingEmbedder;
pub use heuristic::HeuristicChat;
pub use rerank::TokenF1Reranker;
pub use scripted::{prompt_sha256, FnChat, ScriptMode, ScriptedChat};
pub use usage::{ProviderUsage, UsageMeter};

/// Lifecycle stage a provider call is accounted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Add,
    Search,
    Answer,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Add, Stage::Search, Stage::Answer, Stage::Evaluate];

    pub fn label(self) -> &'static str {
        match self {
            Stage::Add => "add",
            Stage::Search => "search",
            Stage::Answer => "answer",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt: String,
    #[serde(default)]
    pub response_schema: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    pub stage: Stage,
}

impl ChatRequest {
    pub fn new(prompt: impl Into<String>, schema: &str, stage: Stage) -> Self {
        Self {
            prompt: prompt.into(),
            response_schema: Some(schema.to_string()),
            temperature: 0.0,
            stage,
        }
    }

    pub fn schema(&self) -> Option<&str> {
        self.response_schema.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("unscripted prompt (sha256 {sha256})")]
    Unscripted { sha256: String },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("malformed provider response: {0}")]
    Response(String),
}

impl ProviderError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, ProviderError::Transport { .. })
    }
}

pub type ProviderResult<T> = Result<T, ProviderError>;

pub trait ChatProvider: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> ProviderResult<String>;

    /// True when identical requests always produce identical replies.
    fn is_deterministic(&self) -> bool {
        false
    }
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    /// One unit vector per input text.
    fn embed(&self, texts: &[String]) -> ProviderResult<Vec<Vec<f32>>>;
}

pub trait Reranker: Send + Sync {
    /// `(candidate index, score)` pairs sorted by descending score, ties by ascending index.
    fn rerank(&self, query: &str, candidates: &[String]) -> ProviderResult<Vec<(usize, f64)>>;
}

/// The provider set a memory engine runs against, plus shared usage accounting.
#[derive(Clone)]
pub struct Providers {
    pub chat: Arc<dyn ChatProvider>,
    pub embedder: Arc<dyn Embedder>,
    pub reranker: Arc<dyn Reranker>,
    pub usage: Arc<UsageMeter>,
}

impl std::fmt::Debug for Providers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Providers")
            .field("embedding_dim", &self.embedder.dimension())
            .finish_non_exhaustive()
    }
}

impl Providers {
    pub fn new(
        chat: Arc<dyn ChatProvider>,
        embedder: Arc<dyn Embedder>,
        reranker: Arc<dyn Reranker>,
    ) -> Self {
        Self {
            chat,
            embedder,
            reranker,
            usage: Arc::new(UsageMeter::default()),
        }
    }

    /// Heuristic chat, 256-d hashing embedder, token-F1 reranker.
    pub fn reference(seed: u64) -> Self {
        Self::new(
            Arc::new(HeuristicChat::new()),
            Arc::new(HashingEmbedder::new(seed, HashingEmbedder::DEFAULT_DIM)),
            Arc::new(TokenF1Reranker),
        )
    }

    pub fn with_chat(mut self, chat: Arc<dyn ChatProvider>) -> Self {
        self.chat = chat;
        self
    }

    pub fn with_reranker(mut self, reranker: Arc<dyn Reranker>) -> Self {
        self.reranker = reranker;
        self
    }

    pub fn chat(&self, request: &ChatRequest) -> ProviderResult<String> {
        if request.prompt.trim().is_empty() {
            return Err(ProviderError::Usage("chat prompt must be non-empty".into()));
        }
        let reply = self.chat.chat(request)?;
        self.usage.record_text(request.stage, &request.prompt, &reply);
        Ok(reply)
    }

    /// Whether the chat backend promises identical replies to identical requests.
    pub fn chat_is_deterministic(&self) -> bool {
        self.chat.is_deterministic()
    }

    pub fn embed(&self, stage: Stage, texts: &[String]) -> ProviderResult<Vec<Vec<f32>>> {
        let out = self.embedder.embed(texts)?;
        let tokens: usize = texts.iter().map(|t| crate::text::whitespace_token_count(t)).sum();
        self.usage.record(stage, tokens as u64, tokens as u64);
        Ok(out)
    }

    pub fn embed_one(&self, stage: Stage, text: &str) -> ProviderResult<Vec<f32>> {
        let mut v = self.embed(stage, &[text.to_string()])?;
        v.pop()
            .ok_or_else(|| ProviderError::Response("embedder returned no vectors".into()))
    }

    pub fn rerank(
        &self,
        stage: Stage,
        query: &str,
        candidates: &[String],
    ) -> ProviderResult<Vec<(usize, f64)>> {
        let out = self.reranker.rerank(query, candidates)?;
        let tokens: usize = crate::text::whitespace_token_count(query)
            + candidates.iter().map(|c| crate::text::whitespace_token_count(c)).sum::<usize>();
        self.usage.record(stage, tokens as u64, tokens as u64);
        Ok(out)
    }
}

/// Sorts `(index, score)` descending by score, ties by ascending index.
pub(crate) fn sort_scored(scored: &mut [(usize, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}
