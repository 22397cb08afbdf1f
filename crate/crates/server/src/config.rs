//! Key-value configuration files and provider selection.
//!
//! A config file holds `key = value` lines; `#` starts a comment. Retrieval
//! keys (`scene_top_n`, `episode_top_k`, `rrf_k`, `max_rounds`, `tau`,
//! `max_time_gap_days`, `fact_candidates`, `verifier_scope`) tune the
//! engine; `bind`, `data_dir`, `token`, `seed` and `provider` configure the
//! process.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use scenemem::providers::remote::{RemoteChat, RemoteConfig, RemoteEmbedder};
use scenemem::providers::{HeuristicChat, Providers, ScriptMode, ScriptedChat, TokenF1Reranker};
use scenemem::types::{RetrievalConfig, VerifierScope};

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub retrieval: RetrievalConfig,
    pub bind: String,
    pub data_dir: PathBuf,
    pub token: Option<String>,
    pub seed: u64,
    /// Overrides `MEM_PROVIDER` when set.
    pub provider: Option<String>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            retrieval: RetrievalConfig::default(),
            bind: "127.0.0.1:8080".to_string(),
            data_dir: PathBuf::from("scenemem-data"),
            token: None,
            seed: 42,
            provider: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let r = &mut self.retrieval;
        match key {
            "scene_top_n" => r.scene_top_n = parse(key, value)?,
            "episode_top_k" => r.episode_top_k = parse(key, value)?,
            "rrf_k" => r.rrf_k = parse(key, value)?,
            "max_rounds" => r.max_rounds = parse(key, value)?,
            "tau" => r.tau = parse(key, value)?,
            "max_time_gap_days" => r.max_time_gap_days = parse(key, value)?,
            "fact_candidates" => r.fact_candidates = parse(key, value)?,
            "verifier_scope" => {
                r.verifier_scope = match value {
                    "selected" => VerifierScope::Selected,
                    "pool" => VerifierScope::Pool,
                    other => bail!("verifier_scope: expected selected or pool, got {other:?}"),
                }
            }
            "bind" => self.bind = value.to_string(),
            "data_dir" => self.data_dir = PathBuf::from(value),
            "token" => self.token = (!value.is_empty()).then(|| value.to_string()),
            "seed" => self.seed = parse(key, value)?,
            "provider" => self.provider = Some(value.to_string()),
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            self.set(k.trim(), v.trim()).with_context(|| format!("line {}", i + 1))?;
        }
        let problems = self.retrieval.validate();
        if !problems.is_empty() {
            bail!("invalid retrieval settings: {}", problems.join("; "));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut s = Settings::default();
        s.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
        Ok(s)
    }
}

/// Builds providers from a backend name: `reference` (default), `remote`
/// (OpenAI-compatible endpoint from `MEM_PROVIDER_ENDPOINT`,
/// `MEM_PROVIDER_MODEL`, optional `MEM_EMBEDDING_MODEL` and
/// `MEM_EMBEDDING_DIM`), or `scripted:<file>` (recorded replies keyed by
/// prompt hash, falling back to the reference chat).
pub fn providers(backend: Option<&str>, seed: u64) -> Result<Providers> {
    let from_env = std::env::var("MEM_PROVIDER").ok();
    let name = backend.or(from_env.as_deref()).unwrap_or("reference");
    if name == "reference" {
        return Ok(Providers::reference(seed));
    }
    if let Some(path) = name.strip_prefix("scripted:") {
        let script = ScriptedChat::from_file(Path::new(path), ScriptMode::Lenient)
            .with_context(|| format!("loading script {path}"))?
            .with_fallback(Arc::new(HeuristicChat::new()));
        return Ok(Providers::reference(seed).with_chat(Arc::new(script)));
    }
    if name == "remote" {
        let var = |k: &str| std::env::var(k).map_err(|_| anyhow!("MEM_PROVIDER=remote needs {k}"));
        let mut cfg = RemoteConfig::new(var("MEM_PROVIDER_ENDPOINT")?, var("MEM_PROVIDER_MODEL")?);
        cfg.embedding_model = std::env::var("MEM_EMBEDDING_MODEL").ok();
        if let Ok(d) = std::env::var("MEM_EMBEDDING_DIM") {
            cfg.embedding_dim = Some(parse("MEM_EMBEDDING_DIM", &d)?);
        }
        return Ok(Providers::new(
            Arc::new(RemoteChat::new(cfg.clone())),
            Arc::new(RemoteEmbedder::new(cfg)),
            Arc::new(TokenF1Reranker),
        ));
    }
    bail!("unknown provider backend {name:?} (expected reference, remote or scripted:<file>)")
}
