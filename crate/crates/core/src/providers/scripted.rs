use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{ChatProvider, ChatRequest, HeuristicChat, ProviderError, ProviderResult};

pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptMode {
    /// Unscripted prompts fail with [`ProviderError::Unscripted`].
    Strict,
    /// Unscripted prompts go to the fallback provider.
    Lenient,
}

/// Replays canned replies keyed by the SHA-256 of the prompt.
pub struct ScriptedChat {
    script: HashMap<String, String>,
    mode: ScriptMode,
    fallback: Arc<dyn ChatProvider>,
}

impl std::fmt::Debug for ScriptedChat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedChat")
            .field("entries", &self.script.len())
            .field("mode", &self.mode)
            .finish()
    }
}

impl ScriptedChat {
    pub fn new(mode: ScriptMode) -> Self {
        Self {
            script: HashMap::new(),
            mode,
            fallback: Arc::new(HeuristicChat::new()),
        }
    }

    pub fn strict() -> Self {
        Self::new(ScriptMode::Strict)
    }

    pub fn lenient() -> Self {
        Self::new(ScriptMode::Lenient)
    }

    pub fn with_fallback(mut self, fallback: Arc<dyn ChatProvider>) -> Self {
        self.fallback = fallback;
        self
    }

    /// Scripts `reply` for the exact `prompt`.
    pub fn insert(&mut self, prompt: &str, reply: impl Into<String>) {
        self.script.insert(prompt_sha256(prompt), reply.into());
    }

    pub fn insert_hash(&mut self, sha256: impl Into<String>, reply: impl Into<String>) {
        self.script.insert(sha256.into().to_lowercase(), reply.into());
    }

    pub fn len(&self) -> usize {
        self.script.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }

    /// Loads a JSON object mapping prompt SHA-256 hex digests to replies.
    pub fn from_json(json: &str, mode: ScriptMode) -> Result<Self, serde_json::Error> {
        let map: HashMap<String, String> = serde_json::from_str(json)?;
        let mut s = Self::new(mode);
        for (k, v) in map {
            s.insert_hash(k, v);
        }
        Ok(s)
    }

    pub fn from_file(path: &Path, mode: ScriptMode) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, mode)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

impl ChatProvider for ScriptedChat {
    fn chat(&self, request: &ChatRequest) -> ProviderResult<String> {
        let key = prompt_sha256(&request.prompt);
        if let Some(reply) = self.script.get(&key) {
            return Ok(reply.clone());
        }
        match self.mode {
            ScriptMode::Strict => Err(ProviderError::Unscripted { sha256: key }),
            ScriptMode::Lenient => self.fallback.chat(request),
        }
    }

    fn is_deterministic(&self) -> bool {
        self.mode == ScriptMode::Strict || self.fallback.is_deterministic()
    }
}

type ChatFn = dyn Fn(&ChatRequest) -> ProviderResult<String> + Send + Sync;

/// A chat provider backed by a closure; handy for sequenced or stateful scripts.
pub struct FnChat {
    f: Box<ChatFn>,
}

impl FnChat {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&ChatRequest) -> ProviderResult<String> + Send + Sync + 'static,
    {
        Self { f: Box::new(f) }
    }
}

impl ChatProvider for FnChat {
    fn chat(&self, request: &ChatRequest) -> ProviderResult<String> {
        (self.f)(request)
    }
}
