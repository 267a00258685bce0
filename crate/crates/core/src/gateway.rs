//! Negative log-likelihood scoring behind a uniform protocol.
//!
//! Backends return full-sequence per-token NLLs (nats). [`Scorer`] adds the
//! (model, text) cache, request deduplication and bounded concurrency on top.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{Transport, UreqTransport};
use crate::retry::RetryPolicy;

/// Environment variable holding the bearer token for HTTP providers.
pub const TOKEN_ENV: &str = "AUDIT_PROVIDER_TOKEN";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("cannot score empty text")]
    EmptyText,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider returned HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("mock table has no entry for {0:?}")]
    UnknownText(String),
    #[error("provider configuration: {0}")]
    Config(String),
}

/// Per-token and total NLL of one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NllResult {
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tokens: Vec<String>,
    pub token_nlls: Vec<f64>,
    pub total_nll: f64,
}

impl NllResult {
    /// Builds a result from per-token NLLs, rejecting negative or non-finite
    /// values (a negative NLL is a positive log-probability).
    pub fn from_token_nlls(
        text: impl Into<String>,
        tokens: Vec<String>,
        token_nlls: Vec<f64>,
    ) -> Result<Self, ProviderError> {
        if token_nlls.is_empty() {
            return Err(ProviderError::Protocol("no tokens scored".into()));
        }
        if let Some(bad) = token_nlls.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(ProviderError::Protocol(format!("token NLL {bad} is negative or non-finite")));
        }
        if !tokens.is_empty() && tokens.len() != token_nlls.len() {
            return Err(ProviderError::Protocol(format!(
                "{} tokens but {} NLLs",
                tokens.len(),
                token_nlls.len()
            )));
        }
        let total_nll = token_nlls.iter().sum();
        Ok(Self { text: text.into(), tokens, token_nlls, total_nll })
    }

    pub fn token_count(&self) -> usize {
        self.token_nlls.len()
    }
}

/// A causal LM that can score text.
pub trait NllBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn score(&self, text: &str) -> Result<NllResult, ProviderError>;
}

/// Mock backend reading a JSON map `text → [token NLL, ...]`.
#[derive(Debug, Clone, Default)]
pub struct TableBackend {
    model: String,
    table: HashMap<String, Vec<f64>>,
}

impl TableBackend {
    pub fn new(model: impl Into<String>, table: HashMap<String, Vec<f64>>) -> Self {
        Self { model: model.into(), table }
    }

    pub fn from_file(model: impl Into<String>, path: &Path) -> Result<Self, ProviderError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        let table = serde_json::from_str(&s)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::new(model, table))
    }
}

impl NllBackend for TableBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn score(&self, text: &str) -> Result<NllResult, ProviderError> {
        let nlls = self.table.get(text).ok_or_else(|| ProviderError::UnknownText(text.to_string()))?;
        NllResult::from_token_nlls(text, Vec::new(), nlls.clone())
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    #[allow(dead_code)]
    model: String,
    tokens: Vec<String>,
    token_nlls: Vec<f64>,
    total_nll: f64,
}

#[derive(Deserialize)]
struct WireError {
    error: String,
}

/// Client for `POST {endpoint}/v1/nll`.
pub struct HttpBackend {
    endpoint: String,
    model: String,
    token: Option<String>,
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, transport: Arc<dyn Transport>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            token: None,
            transport,
            retry: RetryPolicy::standard(),
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

/// Totals may come from a lower-precision sum on the server.
fn totals_agree(reported: f64, summed: f64) -> bool {
    (reported - summed).abs() <= 1e-4 * summed.abs().max(1.0)
}

impl NllBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn score(&self, text: &str) -> Result<NllResult, ProviderError> {
        let url = format!("{}/v1/nll", self.endpoint);
        let body = serde_json::to_string(&WireRequest { model: &self.model, text })
            .expect("request serializes");
        let resp = self.retry.run(|| match self.transport.post_json(&url, &body, self.token.as_deref()) {
            Ok(r) if r.status == 200 => Ok(r),
            Ok(r) => {
                let message = serde_json::from_str::<WireError>(&r.body)
                    .map(|e| e.error)
                    .unwrap_or_else(|_| r.body.clone());
                let transient = r.is_transient();
                Err((ProviderError::Http { status: r.status, message }, transient))
            }
            Err(e) => Err((ProviderError::Transport(e), true)),
        })?;
        let wire: WireResponse = serde_json::from_str(&resp.body)
            .map_err(|e| ProviderError::Protocol(format!("bad response body: {e}")))?;
        let result = NllResult::from_token_nlls(text, wire.tokens, wire.token_nlls)?;
        if !totals_agree(wire.total_nll, result.total_nll) {
            return Err(ProviderError::Protocol(format!(
                "total_nll {} disagrees with token sum {}",
                wire.total_nll, result.total_nll
            )));
        }
        Ok(result)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    model: String,
    #[serde(flatten)]
    result: NllResult,
}

/// Caching, deduplicating front end over a backend.
pub struct Scorer {
    backend: Arc<dyn NllBackend>,
    cache: Mutex<HashMap<String, NllResult>>,
    cache_file: Option<Mutex<BufWriter<File>>>,
    concurrency: usize,
    upstream: AtomicUsize,
}

impl Scorer {
    pub fn new(backend: Arc<dyn NllBackend>) -> Self {
        Self {
            backend,
            cache: Mutex::new(HashMap::new()),
            cache_file: None,
            concurrency: 4,
            upstream: AtomicUsize::new(0),
        }
    }

    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.concurrency = n.max(1);
        self
    }

    /// Loads cached results for this model from a JSONL file and appends new
    /// results to it.
    pub fn with_cache_file(mut self, path: &Path) -> Result<Self, ProviderError> {
        let io = |e: std::io::Error| ProviderError::Config(format!("cache {}: {e}", path.display()));
        if path.exists() {
            let f = File::open(path).map_err(io)?;
            let mut cache = self.cache.lock().unwrap();
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheLine = serde_json::from_str(&line).map_err(|e| {
                    ProviderError::Config(format!("cache {} line {}: {e}", path.display(), i + 1))
                })?;
                if entry.model == self.backend.model_id() {
                    cache.insert(entry.result.text.clone(), entry.result);
                }
            }
        }
        let f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        self.cache_file = Some(Mutex::new(BufWriter::new(f)));
        Ok(self)
    }

    pub fn model_id(&self) -> &str {
        self.backend.model_id()
    }

    /// Backend calls made so far.
    pub fn upstream_calls(&self) -> usize {
        self.upstream.load(Ordering::SeqCst)
    }

    fn cached(&self, text: &str) -> Option<NllResult> {
        self.cache.lock().unwrap().get(text).cloned()
    }

    fn store(&self, result: &NllResult) {
        self.cache.lock().unwrap().insert(result.text.clone(), result.clone());
        if let Some(f) = &self.cache_file {
            let line = CacheLine { model: self.backend.model_id().to_string(), result: result.clone() };
            let mut w = f.lock().unwrap();
            let written = serde_json::to_writer(&mut *w, &line)
                .map_err(std::io::Error::from)
                .and_then(|_| w.write_all(b"\n"))
                .and_then(|_| w.flush());
            if let Err(e) = written {
                log::warn!("could not append to NLL cache: {e}");
            }
        }
    }

    fn fetch(&self, text: &str) -> Result<NllResult, ProviderError> {
        self.upstream.fetch_add(1, Ordering::SeqCst);
        let r = self.backend.score(text)?;
        self.store(&r);
        Ok(r)
    }

    /// Full-sequence NLL of `text`, served from cache when possible.
    pub fn score_text(&self, text: &str) -> Result<NllResult, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::EmptyText);
        }
        match self.cached(text) {
            Some(r) => Ok(r),
            None => self.fetch(text),
        }
    }

    /// Scores many texts. Output order matches input order; repeated texts
    /// are scored once. Failures are reported per item.
    pub fn batch_score(&self, texts: &[String]) -> Vec<Result<NllResult, ProviderError>> {
        let mut unique: Vec<&str> = Vec::new();
        let mut slot_of: HashMap<&str, usize> = HashMap::new();
        let slots: Vec<usize> = texts
            .iter()
            .map(|t| {
                *slot_of.entry(t.as_str()).or_insert_with(|| {
                    unique.push(t.as_str());
                    unique.len() - 1
                })
            })
            .collect();

        let mut results: Vec<Option<Result<NllResult, ProviderError>>> = vec![None; unique.len()];
        let mut pending = Vec::new();
        for (i, t) in unique.iter().enumerate() {
            if t.is_empty() {
                results[i] = Some(Err(ProviderError::EmptyText));
            } else if let Some(r) = self.cached(t) {
                results[i] = Some(Ok(r));
            } else {
                pending.push(i);
            }
        }

        if !pending.is_empty() {
            let next = AtomicUsize::new(0);
            let done = Mutex::new(Vec::with_capacity(pending.len()));
            std::thread::scope(|scope| {
                for _ in 0..self.concurrency.min(pending.len()) {
                    scope.spawn(|| loop {
                        let k = next.fetch_add(1, Ordering::SeqCst);
                        let Some(&i) = pending.get(k) else { break };
                        let r = self.fetch(unique[i]);
                        done.lock().unwrap().push((i, r));
                    });
                }
            });
            for (i, r) in done.into_inner().unwrap() {
                results[i] = Some(r);
            }
        }

        slots
            .into_iter()
            .map(|s| results[s].clone().expect("every unique text scored"))
            .collect()
    }
}

/// Where NLLs come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderKind {
    Http(String),
    Mock(PathBuf),
}

impl std::str::FromStr for ProviderKind {
    type Err = ProviderError;

    /// `http:<url>` or `mock:<path>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("mock:") {
            Ok(ProviderKind::Mock(PathBuf::from(rest)))
        } else if let Some(rest) = s.strip_prefix("http:") {
            // `http:http://host` and `http://host` both name the same endpoint
            if rest.starts_with("//") {
                Ok(ProviderKind::Http(format!("http:{rest}")))
            } else {
                Ok(ProviderKind::Http(rest.to_string()))
            }
        } else if s.starts_with("https://") {
            Ok(ProviderKind::Http(s.to_string()))
        } else {
            Err(ProviderError::Config(format!("expected http:<url> or mock:<path>, got {s:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub model: String,
    pub max_concurrency: usize,
    pub timeout: Duration,
    pub cache_path: Option<PathBuf>,
}

impl ProviderConfig {
    pub fn new(kind: ProviderKind, model: impl Into<String>) -> Self {
        Self {
            kind,
            model: model.into(),
            max_concurrency: 4,
            timeout: Duration::from_secs(120),
            cache_path: None,
        }
    }

    pub fn build(&self) -> Result<Scorer, ProviderError> {
        if self.max_concurrency == 0 {
            return Err(ProviderError::Config("concurrency limit must be at least 1".into()));
        }
        let backend: Arc<dyn NllBackend> = match &self.kind {
            ProviderKind::Mock(path) => Arc::new(TableBackend::from_file(&self.model, path)?),
            ProviderKind::Http(url) => Arc::new(
                HttpBackend::new(url, &self.model, Arc::new(UreqTransport::new(self.timeout)))
                    .with_token(std::env::var(TOKEN_ENV).ok()),
            ),
        };
        let scorer = Scorer::new(backend).with_concurrency(self.max_concurrency);
        match &self.cache_path {
            Some(p) => scorer.with_cache_file(p),
            None => Ok(scorer),
        }
    }
}
