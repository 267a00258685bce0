use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dump::{is_human, ClaimValue, EntityRecord};
use super::properties::PropertySpec;
use super::IngestError;
use crate::text::id_number;

/// Number of distinct humans carrying at least one claim for a property.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyUsage {
    pub pid: String,
    pub distinct_humans: u64,
}

/// Per-property distinct-human counter. Counters built over separate shards
/// can be merged in any order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UsageCounter {
    tracked: Option<HashSet<String>>,
    counts: HashMap<String, u64>,
    humans_seen: u64,
}

impl UsageCounter {
    /// Counts only the given properties.
    pub fn for_properties(properties: &[PropertySpec]) -> Self {
        Self {
            tracked: Some(properties.iter().map(|p| p.pid.clone()).collect()),
            ..Default::default()
        }
    }

    /// Counts every property observed on a human.
    pub fn all() -> Self {
        Self::default()
    }

    /// Adds one entity. Non-humans are ignored.
    pub fn observe(&mut self, entity: &EntityRecord) {
        if !is_human(entity) {
            return;
        }
        self.humans_seen += 1;
        // claim keys are unique per entity, so each human adds at most one per pid
        for (pid, values) in &entity.claims {
            if values.is_empty() {
                continue;
            }
            if self.tracked.as_ref().is_some_and(|t| !t.contains(pid)) {
                continue;
            }
            *self.counts.entry(pid.clone()).or_default() += 1;
        }
    }

    pub fn merge(&mut self, other: UsageCounter) {
        for (pid, n) in other.counts {
            *self.counts.entry(pid).or_default() += n;
        }
        self.humans_seen += other.humans_seen;
        self.tracked = match (self.tracked.take(), other.tracked) {
            (Some(mut a), Some(b)) => {
                a.extend(b);
                Some(a)
            }
            _ => None,
        };
    }

    pub fn humans_seen(&self) -> u64 {
        self.humans_seen
    }

    /// Usage per observed property in numeric pid order.
    pub fn usage(&self) -> Vec<PropertyUsage> {
        let mut out: Vec<_> = self
            .counts
            .iter()
            .map(|(pid, &n)| PropertyUsage { pid: pid.clone(), distinct_humans: n })
            .collect();
        out.sort_by_key(|u| (id_number(&u.pid), u.pid.clone()));
        out
    }
}

/// Counts distinct humans per property over an entity stream.
pub fn count_usage<I>(entities: I, properties: &[PropertySpec]) -> Vec<PropertyUsage>
where
    I: IntoIterator<Item = EntityRecord>,
{
    let mut counter = UsageCounter::for_properties(properties);
    for e in entities {
        counter.observe(&e);
    }
    counter.usage()
}

/// Property ids used by at least `min_humans` distinct humans.
pub fn threshold(usage: &[PropertyUsage], min_humans: u64) -> Vec<String> {
    usage.iter().filter(|u| u.distinct_humans >= min_humans).map(|u| u.pid.clone()).collect()
}

/// One `(human label, value id)` pair as stored in `pairs/<pid>.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub human: String,
    pub value_qid: String,
}

/// Deduplicated pairs for one property.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairSample {
    pub pid: String,
    pub pairs: Vec<Pair>,
    /// Claims under the property whose value was not an entity reference.
    pub skipped_claims: u64,
}

impl PairSample {
    /// Combines two shard samples. Pairs are sorted by (label, value) before
    /// deduplication so the result does not depend on merge order.
    pub fn merge(mut self, other: PairSample) -> PairSample {
        self.pairs.extend(other.pairs);
        self.pairs.sort();
        let mut seen = HashSet::new();
        self.pairs.retain(|p| seen.insert(p.human.clone()));
        self.skipped_claims += other.skipped_claims;
        self
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for p in &self.pairs {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(pid: &str, r: impl BufRead) -> Result<Self, IngestError> {
        let mut pairs = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let pair: Pair = serde_json::from_str(&line).map_err(|e| IngestError::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
            pairs.push(pair);
        }
        Ok(Self { pid: pid.to_string(), pairs, skipped_claims: 0 })
    }

    pub fn read_file(path: &Path) -> Result<Self, IngestError> {
        let pid = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| IngestError::InvalidProperty(format!("{}", path.display())))?;
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(pid, std::io::BufReader::new(f))
    }
}

/// Collects pairs for several entity-valued properties in one pass. Human
/// labels are deduplicated per property keeping the first occurrence.
#[derive(Debug, Clone, Default)]
pub struct PairCollector {
    samples: BTreeMap<String, PairSample>,
    seen: HashMap<String, HashSet<String>>,
}

impl PairCollector {
    pub fn new<S: AsRef<str>>(pids: impl IntoIterator<Item = S>) -> Self {
        let mut c = Self::default();
        for pid in pids {
            let pid = pid.as_ref().to_string();
            c.samples.insert(pid.clone(), PairSample { pid: pid.clone(), ..Default::default() });
            c.seen.insert(pid, HashSet::new());
        }
        c
    }

    pub fn observe(&mut self, entity: &EntityRecord) {
        if !is_human(entity) {
            return;
        }
        let Some(label) = entity.english_label() else {
            return;
        };
        for (pid, sample) in self.samples.iter_mut() {
            let Some(values) = entity.claims.get(pid) else {
                continue;
            };
            let seen = self.seen.get_mut(pid).expect("seen set per pid");
            for v in values {
                match v {
                    ClaimValue::Entity(qid) => {
                        if seen.insert(label.to_string()) {
                            sample.pairs.push(Pair { human: label.to_string(), value_qid: qid.clone() });
                        }
                    }
                    _ => sample.skipped_claims += 1,
                }
            }
        }
    }

    pub fn finish(self) -> Vec<PairSample> {
        self.samples.into_values().collect()
    }

    pub fn pids(&self) -> BTreeSet<&str> {
        self.samples.keys().map(String::as_str).collect()
    }
}

/// Collects `(human label, value id)` pairs for one entity-valued property.
pub fn collect_pairs<I>(entities: I, pid: &str) -> PairSample
where
    I: IntoIterator<Item = EntityRecord>,
{
    let mut c = PairCollector::new([pid]);
    for e in entities {
        c.observe(&e);
    }
    c.finish().pop().expect("one sample")
}
