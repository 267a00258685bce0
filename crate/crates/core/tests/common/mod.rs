//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Read;

use memaudit::canary::TemplateKind;
use memaudit::{AuditRecord, CandidateNlls, Cohort};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

// ---------------------------------------------------------------- metric

/// A random scoring problem: NLL rows plus which candidates are true.
#[derive(Debug, Clone)]
pub struct Instance {
    pub rows: Vec<CandidateNlls>,
    pub alpha: f64,
    pub gts: Vec<usize>,
}

/// NLLs on a 1/64 grid so that sums are exact and duplicated rows tie
/// exactly. Rows are sometimes copied to force ties.
pub fn random_instance(rng: &mut impl Rng) -> Instance {
    let n = rng.random_range(3..=20);
    let k = rng.random_range(0..=5);
    let grid = |rng: &mut dyn rand::RngCore| rng.random_range(0..2048) as f64 / 64.0;
    let mut rows: Vec<CandidateNlls> = Vec::with_capacity(n);
    for _ in 0..n {
        if !rows.is_empty() && rng.random_bool(0.15) {
            let j = rng.random_range(0..rows.len());
            rows.push(rows[j].clone());
            continue;
        }
        rows.push(CandidateNlls {
            subject: grid(rng),
            generic: grid(rng),
            variants: (0..k).map(|_| grid(rng)).collect(),
        });
    }
    // ground truths come first, as in a CandidateSet
    let gts: Vec<usize> = (0..rng.random_range(1..=3.min(n - 1))).collect();
    let alpha = if rng.random_bool(0.7) { 1.0 } else { rng.random_range(0.0..=1.0) };
    Instance { rows, alpha, gts }
}

/// `s(h,v) = [NLL(h0,v) - NLL(h,v)] - α · mean_h~ [NLL(h0,v) - NLL(h~,v)]`
pub fn oracle_score(row: &CandidateNlls, alpha: f64) -> f64 {
    let own = row.generic - row.subject;
    if row.variants.is_empty() {
        return own;
    }
    let bias: f64 = row.variants.iter().map(|v| row.generic - v).sum::<f64>() / row.variants.len() as f64;
    own - alpha * bias
}

/// Rank = number of candidates scoring at least as high.
pub fn oracle_ranks(scores: &[f64]) -> Vec<usize> {
    scores.iter().map(|s| scores.iter().filter(|t| *t >= s).count()).collect()
}

/// `(memorized, v*)` under the plain rank-1 rule.
pub fn oracle_decision(scores: &[f64], gts: &[usize]) -> (bool, Option<usize>) {
    let ranks = oracle_ranks(scores);
    let winner = gts.iter().copied().find(|&g| ranks[g] == 1);
    (winner.is_some(), winner)
}

/// `z*` from the definitions, quadratic in the candidate count.
pub fn oracle_z(scores: &[f64], gts: &[usize], v_star: usize) -> f64 {
    let n = scores.len();
    let margins: Vec<f64> = (0..n)
        .map(|i| {
            let other = (0..n).filter(|&j| j != i).map(|j| scores[j]).fold(f64::NEG_INFINITY, f64::max);
            scores[i] - other
        })
        .collect();
    let mu = margins.iter().sum::<f64>() / n as f64;
    let sigma = (margins.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n as f64).sqrt();
    let best_cf = (0..n).filter(|i| !gts.contains(i)).map(|i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    (scores[v_star] - best_cf - mu) / sigma
}

/// Smallest non-zero gap between any two scores.
pub fn min_nonzero_gap(scores: &[f64]) -> f64 {
    let mut min = f64::INFINITY;
    for (i, a) in scores.iter().enumerate() {
        for b in &scores[i + 1..] {
            let d = (a - b).abs();
            if d > 0.0 {
                min = min.min(d);
            }
        }
    }
    min
}

// ---------------------------------------------------------------- records

pub fn record(model: &str, cohort: Cohort, subject: &str, pid: &str, variant: u32, memorized: bool, z: f64) -> AuditRecord {
    AuditRecord {
        model: model.into(),
        subject: subject.into(),
        cohort: Some(cohort),
        pid: pid.into(),
        variant_id: variant,
        kind: if variant == 0 { TemplateKind::Baseline } else { TemplateKind::Paraphrase },
        memorized,
        top_ground_truth: memorized.then(|| "v".to_string()),
        lead_margin: memorized.then_some(1.0),
        strength: memorized.then_some(z),
        equivalence_hits: vec![],
        unscored: false,
        error: None,
        length_outliers: vec![],
        scores: None,
    }
}

/// Random complete record set: a few models, both cohorts, up to 6
/// subjects × 3 properties × 11 templates.
pub fn random_records(seed: u64) -> Vec<AuditRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let models = rng.random_range(1..=2);
    let templates = rng.random_range(1..=11);
    for m in 0..models {
        for s in 0..rng.random_range(1..=6) {
            let cohort = if s % 2 == 0 { Cohort::WellKnown } else { Cohort::LesserKnown };
            let p_hit: f64 = rng.random();
            for pid in ["P106", "P27", "P19"].iter().take(rng.random_range(1..=3)) {
                for v in 0..templates {
                    let hit = rng.random_bool(p_hit);
                    out.push(record(&format!("m{m}"), cohort, &format!("s{s}"), pid, v, hit, rng.random_range(0.0..5.0)));
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------- dumps

/// Property entities of the synthetic dump: `(pid, datatype, P(human has it))`.
pub const SYNTH_PROPERTIES: &[(&str, &str, f64)] = &[
    ("P19", "wikibase-item", 0.6),
    ("P21", "wikibase-item", 0.9),
    ("P27", "wikibase-item", 0.7),
    ("P106", "wikibase-item", 0.8),
    ("P1412", "wikibase-item", 0.3),
    ("P569", "time", 0.5),
    ("P1971", "quantity", 0.02),
    ("P1477", "string", 0.05),
    ("P213", "external-id", 0.4),
    ("P18", "commons-media", 0.3),
    ("P1449", "monolingualtext", 0.1),
    ("P9001", "wikibase-item", 0.0142),
    ("P9002", "wikibase-item", 0.0143),
    ("P9003", "string", 0.001),
];

fn statement(out: &mut String, pid: &str, datatype: &str, rng: &mut ChaCha8Rng) {
    use std::fmt::Write as _;
    if rng.random_bool(0.05) {
        let _ = write!(out, r#"{{"mainsnak":{{"snaktype":"somevalue","property":"{pid}"}},"rank":"normal"}}"#);
        return;
    }
    let datavalue = match datatype {
        "wikibase-item" => {
            let n: u32 = rng.random_range(1000..1200);
            format!(r#"{{"type":"wikibase-entityid","value":{{"entity-type":"item","numeric-id":{n},"id":"Q{n}"}}}}"#)
        }
        "time" => format!(
            r#"{{"type":"time","value":{{"time":"+{}-03-14T00:00:00Z","precision":11}}}}"#,
            rng.random_range(1800..2000)
        ),
        "quantity" => format!(r#"{{"type":"quantity","value":{{"amount":"+{}","unit":"1"}}}}"#, rng.random_range(0..9)),
        "monolingualtext" => r#"{"type":"monolingualtext","value":{"text":"x","language":"en"}}"#.to_string(),
        _ => format!(r#"{{"type":"string","value":"s{}"}}"#, rng.random_range(0..100)),
    };
    let rank = if rng.random_bool(0.03) { "deprecated" } else { "normal" };
    let _ = write!(
        out,
        r#"{{"mainsnak":{{"snaktype":"value","property":"{pid}","datavalue":{datavalue}}},"type":"statement","rank":"{rank}"}}"#
    );
}

fn instance_of(class: &str) -> String {
    format!(r#"{{"mainsnak":{{"snaktype":"value","property":"P31","datavalue":{{"type":"wikibase-entityid","value":{{"id":"{class}"}}}}}},"rank":"normal"}}"#)
}

/// Line `i` of the synthetic dump (without trailing comma). Entities are
/// 70 % humans; the rest are cities or humans' instance-of lookalikes.
pub fn synthetic_entity(seed: u64, i: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let human = rng.random_bool(0.7);
    let p31 = if human {
        if rng.random_bool(0.1) {
            format!("{},{}", instance_of("Q15632617"), instance_of("Q5"))
        } else {
            instance_of("Q5")
        }
    } else if rng.random_bool(0.5) {
        instance_of("Q515")
    } else {
        instance_of("Q55")
    };
    let mut out = format!(
        r#"{{"type":"item","id":"Q{}","labels":{{"en":{{"language":"en","value":"Entity {i}"}}}},"claims":{{"P31":[{p31}]"#,
        100_000 + i
    );
    for &(pid, datatype, p) in SYNTH_PROPERTIES {
        // non-humans carry the same properties, which must not count
        if rng.random_bool(p) {
            out.push_str(&format!(r#","{pid}":["#));
            for k in 0..rng.random_range(1..=2) {
                if k > 0 {
                    out.push(',');
                }
                statement(&mut out, pid, datatype, &mut rng);
            }
            out.push(']');
        }
    }
    out.push_str("}}");
    out
}

pub fn property_entity(pid: &str, datatype: &str) -> String {
    json!({"type": "property", "id": pid, "datatype": datatype,
        "labels": {"en": {"language": "en", "value": format!("label of {pid}")}}, "claims": {}})
    .to_string()
}

/// Lazily generated dump in the canonical array layout; never holds more
/// than one line in memory.
pub struct SyntheticDump {
    seed: u64,
    entities: u64,
    next: u64,
    header: Vec<String>,
    pending: Vec<u8>,
    pos: usize,
    finished: bool,
}

impl SyntheticDump {
    pub fn new(seed: u64, entities: u64) -> Self {
        let mut header = vec!["[".to_string()];
        header.extend(SYNTH_PROPERTIES.iter().map(|(pid, dt, _)| property_entity(pid, dt) + ","));
        header.reverse();
        Self { seed, entities, next: 0, header, pending: Vec::new(), pos: 0, finished: false }
    }

    fn refill(&mut self) {
        self.pending.clear();
        self.pos = 0;
        if let Some(line) = self.header.pop() {
            self.pending.extend_from_slice(line.as_bytes());
        } else if self.next < self.entities {
            self.pending.extend_from_slice(synthetic_entity(self.seed, self.next).as_bytes());
            if self.next + 1 < self.entities {
                self.pending.push(b',');
            }
            self.next += 1;
        } else if !self.finished {
            self.pending.push(b']');
            self.finished = true;
        } else {
            return;
        }
        self.pending.push(b'\n');
    }
}

impl Read for SyntheticDump {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        if self.pos == self.pending.len() {
            self.refill();
            if self.pending.is_empty() {
                return Ok(0);
            }
        }
        let n = buf.len().min(self.pending.len() - self.pos);
        buf[..n].copy_from_slice(&self.pending[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

/// Brute-force recount on generic JSON: distinct human ids per property id.
pub fn brute_force_usage(lines: &[String]) -> BTreeMap<String, u64> {
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for line in lines {
        let v: Value = serde_json::from_str(line).unwrap();
        if v["type"] != "item" {
            continue;
        }
        let human = v["claims"]["P31"]
            .as_array()
            .into_iter()
            .flatten()
            .any(|s| s["mainsnak"]["datavalue"]["value"]["id"] == "Q5");
        if !human {
            continue;
        }
        let id = v["id"].as_str().unwrap().to_string();
        for (pid, stmts) in v["claims"].as_object().unwrap() {
            if !stmts.as_array().unwrap().is_empty() {
                seen.insert((pid.clone(), id.clone()));
            }
        }
    }
    let mut counts = BTreeMap::new();
    for (pid, _) in seen {
        *counts.entry(pid).or_insert(0) += 1;
    }
    counts
}

/// Pids the filtering stages should retain, recomputed from scratch.
pub fn brute_force_retained(usage: &BTreeMap<String, u64>, min_humans: u64) -> BTreeSet<String> {
    let whitelist: HashMap<&str, &str> = SYNTH_PROPERTIES.iter().map(|(p, d, _)| (*p, *d)).collect();
    usage
        .iter()
        .filter(|(pid, n)| {
            **n >= min_humans
                && whitelist
                    .get(pid.as_str())
                    .is_some_and(|d| ["wikibase-item", "string", "quantity", "time"].contains(d))
        })
        .map(|(p, _)| p.clone())
        .collect()
}
