//! Adapters for OpenAI-compatible HTTP endpoints (`/chat/completions`, `/embeddings`).

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, Embedder, ProviderError, ProviderResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL, e.g. `https://api.example.com/v1`.
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub embedding_model: Option<String>,
    #[serde(default)]
    pub embedding_dim: Option<usize>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_token_env() -> String {
    "MEM_PROVIDER_TOKEN".to_string()
}

fn default_attempts() -> u32 {
    3
}

fn default_timeout() -> u64 {
    60
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            embedding_model: None,
            embedding_dim: None,
            token_env: default_token_env(),
            max_attempts: default_attempts(),
            timeout_secs: default_timeout(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.endpoint.trim_end_matches('/'), path)
    }
}

#[derive(Debug, Clone)]
struct Client {
    cfg: RemoteConfig,
    agent: ureq::Agent,
}

impl Client {
    fn new(cfg: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build();
        Self { cfg, agent }
    }

    fn post(&self, path: &str, body: &Value) -> ProviderResult<Value> {
        let token = std::env::var(&self.cfg.token_env).ok();
        let attempts = self.cfg.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            let mut req = self.agent.post(&self.cfg.url(path));
            if let Some(t) = &token {
                req = req.set("Authorization", &format!("Bearer {t}"));
            }
            match req.send_json(body.clone()) {
                Ok(resp) => {
                    return resp
                        .into_json::<Value>()
                        .map_err(|e| ProviderError::Response(e.to_string()))
                }
                Err(ureq::Error::Status(code, resp)) if code < 500 && code != 429 => {
                    let text = resp.into_string().unwrap_or_default();
                    return Err(ProviderError::Response(format!("HTTP {code}: {text}")));
                }
                Err(e) => {
                    last = e.to_string();
                    tracing::warn!(attempt, error = %last, "remote provider call failed");
                    if attempt < attempts {
                        std::thread::sleep(Duration::from_millis(200 * u64::from(attempt)));
                    }
                }
            }
        }
        Err(ProviderError::Transport { attempts, message: last })
    }
}

pub struct RemoteChat {
    client: Client,
}

impl RemoteChat {
    pub fn new(cfg: RemoteConfig) -> Self {
        Self { client: Client::new(cfg) }
    }
}

pub(crate) fn chat_body(model: &str, req: &ChatRequest) -> Value {
    json!({
        "model": model,
        "temperature": req.temperature,
        "messages": [{"role": "user", "content": req.prompt}],
    })
}

impl ChatProvider for RemoteChat {
    fn chat(&self, request: &ChatRequest) -> ProviderResult<String> {
        let body = chat_body(&self.client.cfg.model, request);
        let resp = self.client.post("chat/completions", &body)?;
        resp["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Response("missing choices[0].message.content".into()))
    }
}

pub struct RemoteEmbedder {
    client: Client,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(cfg: RemoteConfig) -> Self {
        let dim = cfg.embedding_dim.unwrap_or(1024);
        Self { client: Client::new(cfg), dim }
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> ProviderResult<Vec<Vec<f32>>> {
        if texts.is_empty() {
            return Err(ProviderError::Usage("embed requires at least one text".into()));
        }
        let model = self
            .client
            .cfg
            .embedding_model
            .clone()
            .unwrap_or_else(|| self.client.cfg.model.clone());
        let resp = self
            .client
            .post("embeddings", &json!({"model": model, "input": texts}))?;
        let data = resp["data"]
            .as_array()
            .ok_or_else(|| ProviderError::Response("missing data array".into()))?;
        let mut out = Vec::with_capacity(data.len());
        for item in data {
            let raw: Vec<f64> = serde_json::from_value(item["embedding"].clone())
                .map_err(|e| ProviderError::Response(e.to_string()))?;
            out.push(normalize(&raw)?);
        }
        if out.len() != texts.len() {
            return Err(ProviderError::Response(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                out.len()
            )));
        }
        Ok(out)
    }
}

fn normalize(v: &[f64]) -> ProviderResult<Vec<f32>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(ProviderError::Response("degenerate embedding".into()));
    }
    Ok(v.iter().map(|x| (x / norm) as f32).collect())
}
