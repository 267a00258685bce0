//! English label resolution and counterfactual sampling.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::http::Transport;
use crate::ingest::PairSample;
use crate::retry::RetryPolicy;
use crate::text::{label_key, normalize_whitespace};

/// Largest id batch the entity API accepts from anonymous clients.
pub const BATCH_SIZE: usize = 50;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("label endpoint failed ({message}); unresolved: {}", unresolved.join(", "))]
    Transport { message: String, unresolved: Vec<String> },
    #[error("offline label cache has no entry for: {}", .0.join(", "))]
    CacheMiss(Vec<String>),
    #[error("malformed label response: {0}")]
    Response(String),
    #[error("no label endpoint configured")]
    NoEndpoint,
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad cache or counterfactual file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    /// `None` records that the entity has no English label.
    pub label: Option<String>,
    /// Seconds since the Unix epoch.
    pub fetched_at: u64,
}

/// Label cache persisted as a JSON object keyed by entity id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelCache {
    pub entries: BTreeMap<String, CacheEntry>,
    pub path: Option<PathBuf>,
}

impl LabelCache {
    /// Loads the cache at `path`, or starts empty if the file does not exist.
    pub fn open(path: &Path) -> Result<Self, LabelError> {
        let entries = match std::fs::read_to_string(path) {
            Ok(s) => serde_json::from_str(&s)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self { entries, path: Some(path.to_path_buf()) })
    }

    pub fn save(&self) -> Result<(), LabelError> {
        if let Some(path) = &self.path {
            let mut json = serde_json::to_string_pretty(&self.entries)?;
            json.push('\n');
            std::fs::write(path, json)?;
        }
        Ok(())
    }

    pub fn get(&self, qid: &str) -> Option<&CacheEntry> {
        self.entries.get(qid)
    }

    pub fn insert(&mut self, qid: String, label: Option<String>) {
        let fetched_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        self.entries.insert(qid, CacheEntry { label, fetched_at });
    }
}

/// Anything that maps entity ids to English labels. Ids without a label are
/// simply absent from the result.
pub trait LabelSource {
    fn labels(&self, qids: &[String]) -> Result<BTreeMap<String, String>, LabelError>;
}

impl LabelSource for BTreeMap<String, String> {
    fn labels(&self, qids: &[String]) -> Result<BTreeMap<String, String>, LabelError> {
        Ok(qids.iter().filter_map(|q| self.get(q).map(|l| (q.clone(), l.clone()))).collect())
    }
}

/// Batched, cached client for the `wbgetentities` API.
pub struct LabelResolver {
    endpoint: Option<String>,
    transport: Arc<dyn Transport>,
    cache: Mutex<LabelCache>,
    retry: RetryPolicy,
    concurrency: usize,
    offline: bool,
    calls: AtomicUsize,
}

impl LabelResolver {
    pub fn new(endpoint: impl Into<String>, transport: Arc<dyn Transport>, cache: LabelCache) -> Self {
        Self {
            endpoint: Some(endpoint.into()),
            transport,
            cache: Mutex::new(cache),
            retry: RetryPolicy::standard(),
            concurrency: 4,
            offline: false,
            calls: AtomicUsize::new(0),
        }
    }

    /// Cache-only resolver; any miss is an error.
    pub fn offline(cache: LabelCache) -> Self {
        Self {
            endpoint: None,
            transport: Arc::new(NoTransport),
            cache: Mutex::new(cache),
            retry: RetryPolicy::standard(),
            concurrency: 1,
            offline: true,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.concurrency = n.max(1);
        self
    }

    /// HTTP requests issued so far, retries included.
    pub fn http_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn cache(&self) -> LabelCache {
        self.cache.lock().unwrap().clone()
    }

    pub fn save_cache(&self) -> Result<(), LabelError> {
        self.cache.lock().unwrap().save()
    }

    fn batch_url(&self, ids: &[String]) -> Result<String, LabelError> {
        let endpoint = self.endpoint.as_deref().ok_or(LabelError::NoEndpoint)?;
        Ok(format!(
            "{endpoint}?action=wbgetentities&ids={}&props=labels&languages=en&format=json",
            ids.join("|")
        ))
    }

    fn fetch_batch(&self, ids: &[String]) -> Result<BTreeMap<String, Option<String>>, String> {
        let url = self.batch_url(ids).map_err(|e| e.to_string())?;
        let resp = self.retry.run(|| {
            self.calls.fetch_add(1, Ordering::SeqCst);
            match self.transport.get(&url) {
                Ok(r) if r.status == 200 => Ok(r),
                Ok(r) => Err((format!("HTTP {}", r.status), r.is_transient())),
                Err(e) => Err((e, true)),
            }
        })?;
        parse_entities(&resp.body, ids)
    }

    /// Resolves ids to English labels, consulting the cache first. Missing
    /// labels are left out of the map rather than reported as errors.
    pub fn resolve_labels(&self, qids: &[String]) -> Result<BTreeMap<String, String>, LabelError> {
        let unique: BTreeSet<&String> = qids.iter().collect();
        let mut out = BTreeMap::new();
        let mut missing = Vec::new();
        {
            let cache = self.cache.lock().unwrap();
            for q in unique {
                match cache.get(q) {
                    Some(entry) => {
                        if let Some(l) = &entry.label {
                            out.insert(q.clone(), l.clone());
                        }
                    }
                    None => missing.push(q.clone()),
                }
            }
        }
        if missing.is_empty() {
            return Ok(out);
        }
        if self.offline {
            return Err(LabelError::CacheMiss(missing));
        }

        let batches: Vec<&[String]> = missing.chunks(BATCH_SIZE).collect();
        let next = AtomicUsize::new(0);
        let results = Mutex::new(Vec::with_capacity(batches.len()));
        std::thread::scope(|scope| {
            for _ in 0..self.concurrency.min(batches.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(batch) = batches.get(i) else { break };
                    let r = self.fetch_batch(batch);
                    results.lock().unwrap().push((i, r));
                });
            }
        });
        let mut results = results.into_inner().unwrap();
        results.sort_by_key(|(i, _)| *i);

        let mut failures = Vec::new();
        let mut unresolved = Vec::new();
        {
            let mut cache = self.cache.lock().unwrap();
            for (i, r) in results {
                match r {
                    Ok(found) => {
                        for q in batches[i] {
                            let label = found.get(q).cloned().flatten();
                            if let Some(l) = &label {
                                out.insert(q.clone(), l.clone());
                            }
                            cache.insert(q.clone(), label);
                        }
                    }
                    Err(e) => {
                        failures.push(e);
                        unresolved.extend(batches[i].iter().cloned());
                    }
                }
            }
        }
        if !failures.is_empty() {
            return Err(LabelError::Transport { message: failures.join("; "), unresolved });
        }
        Ok(out)
    }
}

impl LabelSource for LabelResolver {
    fn labels(&self, qids: &[String]) -> Result<BTreeMap<String, String>, LabelError> {
        self.resolve_labels(qids)
    }
}

struct NoTransport;

impl Transport for NoTransport {
    fn get(&self, _: &str) -> Result<crate::http::HttpResponse, String> {
        Err("offline".into())
    }
    fn post_json(&self, _: &str, _: &str, _: Option<&str>) -> Result<crate::http::HttpResponse, String> {
        Err("offline".into())
    }
}

/// Pulls `entities.<id>.labels.en.value` for each requested id.
fn parse_entities(body: &str, ids: &[String]) -> Result<BTreeMap<String, Option<String>>, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("bad JSON: {e}"))?;
    let entities = v
        .get("entities")
        .and_then(Value::as_object)
        .ok_or_else(|| "response has no entities object".to_string())?;
    Ok(ids
        .iter()
        .map(|id| {
            let label = entities
                .get(id)
                .and_then(|e| e.pointer("/labels/en/value"))
                .and_then(Value::as_str)
                .map(str::to_string);
            (id.clone(), label)
        })
        .collect())
}

/// Fixed counterfactual humans and values for one property.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterfactualSet {
    pub pid: String,
    pub human_cfs: Vec<String>,
    pub value_cfs: Vec<String>,
    pub seed: u64,
    /// Fewer than the requested number of usable pairs were available.
    pub undersized: bool,
}

/// Seeded Fisher–Yates permutation of `0..len`, stable across platforms.
pub fn shuffled_indices(len: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i as u64) as usize;
        idx.swap(i, j);
    }
    idx
}

/// Draws `n` counterfactual pairs: shuffles the deduplicated pairs under
/// `seed` and walks them in order, resolving value labels. Pairs whose value
/// has no label, or whose label duplicates an earlier value, are replaced by
/// the next pair in shuffle order.
pub fn sample_counterfactuals(
    pairs: &PairSample,
    n: usize,
    seed: u64,
    labels: &dyn LabelSource,
) -> Result<CounterfactualSet, LabelError> {
    let order = shuffled_indices(pairs.pairs.len(), seed);
    let mut human_cfs = Vec::new();
    let mut value_cfs = Vec::new();
    let mut seen = HashSet::new();
    let mut cursor = 0;
    while value_cfs.len() < n && cursor < order.len() {
        let need = n - value_cfs.len();
        let window = &order[cursor..(cursor + need).min(order.len())];
        cursor += window.len();
        let ids: Vec<String> = window.iter().map(|&i| pairs.pairs[i].value_qid.clone()).collect();
        let resolved = labels.labels(&ids)?;
        for &i in window {
            let pair = &pairs.pairs[i];
            let Some(label) = resolved.get(&pair.value_qid) else {
                continue;
            };
            let label = normalize_whitespace(label);
            if label.is_empty() || !seen.insert(label_key(&label)) {
                continue;
            }
            human_cfs.push(pair.human.clone());
            value_cfs.push(label);
        }
    }
    let undersized = value_cfs.len() < n;
    Ok(CounterfactualSet { pid: pairs.pid.clone(), human_cfs, value_cfs, seed, undersized })
}

#[derive(Serialize, Deserialize)]
struct CfEntry {
    human_cfs: Vec<String>,
    value_cfs: Vec<String>,
    seed: u64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    undersized: bool,
}

/// Renders `counterfactuals.json` (pid → sets), keyed in lexical pid order.
pub fn counterfactuals_to_json(sets: &[CounterfactualSet]) -> String {
    let map: BTreeMap<&str, CfEntry> = sets
        .iter()
        .map(|s| {
            (
                s.pid.as_str(),
                CfEntry {
                    human_cfs: s.human_cfs.clone(),
                    value_cfs: s.value_cfs.clone(),
                    seed: s.seed,
                    undersized: s.undersized,
                },
            )
        })
        .collect();
    let mut out = serde_json::to_string_pretty(&map).expect("counterfactuals serialize");
    out.push('\n');
    out
}

pub fn counterfactuals_from_json(json: &str) -> Result<Vec<CounterfactualSet>, LabelError> {
    let map: BTreeMap<String, CfEntry> = serde_json::from_str(json)?;
    Ok(map
        .into_iter()
        .map(|(pid, e)| CounterfactualSet {
            pid,
            human_cfs: e.human_cfs,
            value_cfs: e.value_cfs,
            seed: e.seed,
            undersized: e.undersized,
        })
        .collect())
}
