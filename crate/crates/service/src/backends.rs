//! NLU construction and HTTP clients for OpenAI-compatible endpoints.

use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use serde_json::{json, Value};
use treewalk_core::nlu::{
    BackendError, ChatMessage, DecodingParams, LexicalNlu, LlmBackend, LlmNlu, Nlu, NluConfig, Role, ScriptFixture,
    ScriptedBackend,
};
use treewalk_core::retrieval::{EmbeddingProvider, LexicalEmbedder, ProviderError, RetrievalConfig};

use crate::config::{BackendKind, EmbeddingKind, Endpoint, ServiceConfig};

pub type SharedNlu = Arc<dyn Nlu + Send + Sync>;
pub type SharedEmbedder = Arc<dyn EmbeddingProvider<f64>>;

fn url(base: &str, suffix: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with(suffix) {
        base.to_string()
    } else {
        format!("{base}{suffix}")
    }
}

fn client(timeout: Duration) -> anyhow::Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .context("building HTTP client")
}

/// Chat completions over HTTP (`POST {endpoint}/chat/completions`).
pub struct HttpLlm {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    model: String,
}

impl HttpLlm {
    pub fn new(endpoint: &Endpoint, timeout: Duration) -> anyhow::Result<Self> {
        let base = endpoint.endpoint.as_deref().context("LLM endpoint not set")?;
        Ok(HttpLlm {
            client: client(timeout)?,
            url: url(base, "/chat/completions"),
            api_key: endpoint.api_key.clone(),
            model: endpoint.model.clone().context("LLM model not set")?,
        })
    }
}

fn send(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
) -> Result<Value, BackendError> {
    let mut req = client.post(url).json(body);
    if let Some(key) = api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| BackendError::Unavailable(e.to_string()))?;
    let status = resp.status();
    let text = resp.text().map_err(|e| BackendError::Unavailable(e.to_string()))?;
    if !status.is_success() {
        return Err(BackendError::Status {
            status: status.as_u16(),
            body: text.chars().take(500).collect(),
        });
    }
    serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))
}

impl LlmBackend for HttpLlm {
    fn complete(&self, messages: &[ChatMessage], params: &DecodingParams) -> Result<String, BackendError> {
        let messages: Vec<Value> = messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                };
                json!({"role": role, "content": m.text})
            })
            .collect();
        let mut body = json!({"model": self.model, "messages": messages, "temperature": params.temperature});
        if let Some(n) = params.max_tokens {
            body["max_tokens"] = json!(n);
        }
        let reply = send(&self.client, &self.url, self.api_key.as_deref(), &body)?;
        let content = reply["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Protocol("no choices[0].message.content".into()))?;
        if content.trim().is_empty() {
            return Err(BackendError::Empty);
        }
        Ok(content.to_string())
    }
}

/// Embeddings over HTTP (`POST {endpoint}/embeddings`), L2-normalized.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    model: Option<String>,
    dimension: usize,
}

impl HttpEmbedder {
    /// Probes the endpoint once to learn the vector dimension.
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> anyhow::Result<Self> {
        let base = endpoint.endpoint.as_deref().context("embedding endpoint not set")?;
        let mut e = HttpEmbedder {
            client: client(timeout)?,
            url: url(base, "/embeddings"),
            api_key: endpoint.api_key.clone(),
            model: endpoint.model.clone(),
            dimension: 0,
        };
        let probe = e.request(&["dimension probe"]).context("probing embedding endpoint")?;
        e.dimension = probe[0].len();
        anyhow::ensure!(e.dimension > 0, "embedding endpoint returned an empty vector");
        Ok(e)
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let mut body = json!({"input": texts});
        if let Some(m) = &self.model {
            body["model"] = json!(m);
        }
        let reply = send(&self.client, &self.url, self.api_key.as_deref(), &body)
            .map_err(|e| ProviderError::new(e.to_string()))?;
        let data = reply["data"]
            .as_array()
            .ok_or_else(|| ProviderError::new("response has no data list"))?;
        let mut out = vec![Vec::new(); texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let idx = item["index"].as_u64().map_or(pos, |i| i as usize);
            let v: Vec<f64> = item["embedding"]
                .as_array()
                .ok_or_else(|| ProviderError::new("data item has no embedding"))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| ProviderError::new("non-numeric embedding")))
                .collect::<Result<_, _>>()?;
            *out.get_mut(idx).ok_or_else(|| ProviderError::new("embedding index out of range"))? = normalize(v);
        }
        if out.iter().any(Vec::is_empty) {
            return Err(ProviderError::new("missing embeddings in response"));
        }
        Ok(out)
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

impl EmbeddingProvider<f64> for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        Ok(self.request(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        self.request(texts)
    }
}

pub fn build_embedder(config: &ServiceConfig) -> anyhow::Result<SharedEmbedder> {
    Ok(match config.embedding {
        EmbeddingKind::Lexical => Arc::new(LexicalEmbedder::default()),
        EmbeddingKind::Http => Arc::new(HttpEmbedder::connect(
            &config.embed,
            Duration::from_secs(config.request_timeout_secs),
        )?),
    })
}

pub fn nlu_config(config: &ServiceConfig) -> NluConfig {
    NluConfig {
        retrieval: RetrievalConfig::with_k(config.retrieval_k),
        relevance_threshold: config.relevance_threshold,
        ..Default::default()
    }
}

/// The session-independent NLU for `serve` and `chat`.
pub fn build_nlu(config: &ServiceConfig) -> anyhow::Result<SharedNlu> {
    let nlu: SharedNlu = match config.nlu_backend {
        BackendKind::Oracle => match &config.oracle_fixture {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let fixture = ScriptFixture::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
                Arc::new(LlmNlu::new(
                    ScriptedBackend::fixture(fixture),
                    build_embedder(config)?,
                    nlu_config(config),
                ))
            }
            None => Arc::new(LexicalNlu::new(RetrievalConfig::with_k(config.retrieval_k))),
        },
        BackendKind::HttpLlm => Arc::new(LlmNlu::new(
            HttpLlm::new(&config.llm, Duration::from_secs(config.request_timeout_secs))?,
            build_embedder(config)?,
            nlu_config(config),
        )),
    };
    Ok(nlu)
}
