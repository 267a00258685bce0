//! Calibrated NLL ranking, the rank-1 memorization rule and memorization
//! strength.
//!
//! For subject `h`, generic subject `h0`, name variants `S(h)` and each
//! candidate value `v`:
//!
//! ```text
//! s(h, v) = [NLL(h0, v) - NLL(h, v)] - alpha * mean_{h~ in S(h)} [NLL(h0, v) - NLL(h~, v)]
//! ```
//!
//! A fact counts as memorized when a ground-truth candidate ranks first by
//! descending `s`. Strength standardizes the winner's lead over the best
//! counterfactual against the lead of every candidate over its nearest
//! competitor.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::label_key;

/// Cosine-similarity threshold above which a counterfactual counts as the
/// same answer as a ground truth.
pub const EQUIVALENCE_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("candidate {index}: NLL {value} is not a finite non-negative number")]
    BadNll { index: usize, value: f64 },
    #[error("candidate {index} has {got} variant NLLs, expected {expected}")]
    ShapeMismatch { index: usize, got: usize, expected: usize },
    #[error("candidate index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("invalid candidate set: {0}")]
    InvalidCandidates(String),
    #[error("strength needs at least 3 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("lead margins have zero spread")]
    DegenerateDistribution,
    #[error("candidate {0} is not a ground truth ranked strictly above every counterfactual")]
    NotMemorized(usize),
    #[error("bad similarity table: {0}")]
    Table(String),
}

/// Ground truths `G` and counterfactuals `V \ G` for one subject–property
/// pair. Candidate `i` is a ground truth iff `i < ground_truths.len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub pid: String,
    pub ground_truths: Vec<String>,
    pub counterfactuals: Vec<String>,
}

impl CandidateSet {
    pub fn new(
        pid: impl Into<String>,
        ground_truths: Vec<String>,
        counterfactuals: Vec<String>,
    ) -> Result<Self, MetricError> {
        let set = Self { pid: pid.into(), ground_truths, counterfactuals };
        set.validate()?;
        Ok(set)
    }

    /// Builds a set from possibly overlapping lists: counterfactuals that
    /// duplicate a ground truth (or each other) are dropped, as are repeated
    /// ground truths.
    pub fn from_overlapping(
        pid: impl Into<String>,
        ground_truths: &[String],
        counterfactuals: &[String],
    ) -> Result<Self, MetricError> {
        let mut seen = std::collections::HashSet::new();
        let gts: Vec<String> =
            ground_truths.iter().filter(|g| seen.insert(label_key(g))).cloned().collect();
        let cfs: Vec<String> =
            counterfactuals.iter().filter(|c| seen.insert(label_key(c))).cloned().collect();
        Self::new(pid, gts, cfs)
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if self.ground_truths.is_empty() {
            return Err(MetricError::InvalidCandidates("no ground truth".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in self.candidates() {
            if !seen.insert(label_key(c)) {
                return Err(MetricError::InvalidCandidates(format!("duplicate candidate {c:?}")));
            }
        }
        if self.len() < 3 {
            return Err(MetricError::InvalidCandidates(format!(
                "need at least 3 candidates, got {}",
                self.len()
            )));
        }
        Ok(())
    }

    /// All candidates, ground truths first.
    pub fn candidates(&self) -> impl Iterator<Item = &String> {
        self.ground_truths.iter().chain(&self.counterfactuals)
    }

    pub fn label(&self, i: usize) -> &str {
        let g = self.ground_truths.len();
        if i < g { &self.ground_truths[i] } else { &self.counterfactuals[i - g] }
    }

    pub fn len(&self) -> usize {
        self.ground_truths.len() + self.counterfactuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_ground_truth(&self, i: usize) -> bool {
        i < self.ground_truths.len()
    }

    pub fn ground_truth_indices(&self) -> Vec<usize> {
        (0..self.ground_truths.len()).collect()
    }
}

/// NLLs of one candidate's canaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateNlls {
    /// `NLL(h, v)`
    pub subject: f64,
    /// `NLL(h0, v)`
    pub generic: f64,
    /// `NLL(h~, v)` for each name variant, in variant order.
    pub variants: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub rows: Vec<CandidateNlls>,
    pub alpha: f64,
}

fn check_nll(index: usize, value: f64) -> Result<(), MetricError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(MetricError::BadNll { index, value })
    }
}

impl ScoreMatrix {
    pub fn new(rows: Vec<CandidateNlls>, alpha: f64) -> Result<Self, MetricError> {
        let m = Self { rows, alpha };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        let expected = self.rows.first().map_or(0, |r| r.variants.len());
        for (i, row) in self.rows.iter().enumerate() {
            if row.variants.len() != expected {
                return Err(MetricError::ShapeMismatch { index: i, got: row.variants.len(), expected });
            }
            check_nll(i, row.subject)?;
            check_nll(i, row.generic)?;
            for &v in &row.variants {
                check_nll(i, v)?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Calibrated score of every candidate.
    pub fn scores(&self) -> Result<Vec<f64>, MetricError> {
        (0..self.rows.len()).map(|i| calibrated_score(self, i)).collect()
    }
}

/// `s(h, v_i)`. Without name variants the adjustment term is zero.
///
/// Evaluated as `(1 - alpha) * NLL(h0) + alpha * mean NLL(h~) - NLL(h)`, which
/// is the same quantity with the generic-subject terms collected: at
/// `alpha = 1` the generic NLL is multiplied by exactly zero and cannot
/// perturb the score.
pub fn calibrated_score(m: &ScoreMatrix, i: usize) -> Result<f64, MetricError> {
    let row = m.rows.get(i).ok_or(MetricError::IndexOutOfRange(i))?;
    check_nll(i, row.subject)?;
    check_nll(i, row.generic)?;
    for &v in &row.variants {
        check_nll(i, v)?;
    }
    if row.variants.is_empty() {
        return Ok(row.generic - row.subject);
    }
    let mean_variant = row.variants.iter().sum::<f64>() / row.variants.len() as f64;
    Ok((1.0 - m.alpha) * row.generic + m.alpha * mean_variant - row.subject)
}

/// Ranks under descending score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranking {
    /// 1-based rank per candidate. Tied candidates all take the worst rank of
    /// their group, so a tie at the top leaves no candidate at rank 1.
    pub ranks: Vec<usize>,
    /// Candidate indices by descending score, ties broken by index.
    pub order: Vec<usize>,
}

impl Ranking {
    /// 1-based position of each candidate in `order`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (p, &i) in self.order.iter().enumerate() {
            pos[i] = p + 1;
        }
        pos
    }
}

pub fn rank_candidates(scores: &[f64]) -> Ranking {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        for &i in &order[start..end] {
            ranks[i] = end;
        }
        start = end;
    }
    Ranking { ranks, order }
}

/// Source of label similarities for the equivalence relaxation.
#[derive(Debug, Clone, PartialEq)]
pub enum EquivalenceMode {
    /// 1.0 for labels equal after normalization, else 0.0.
    Exact,
    /// Precomputed similarities keyed by normalized label pair; pairs not in
    /// the table fall back to exact matching.
    Table(HashMap<(String, String), f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceProvider {
    pub mode: EquivalenceMode,
    pub threshold: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TableEntry {
    Triple(String, String, f64),
    Object { a: String, b: String, similarity: f64 },
}

impl EquivalenceProvider {
    pub fn exact() -> Self {
        Self { mode: EquivalenceMode::Exact, threshold: EQUIVALENCE_THRESHOLD }
    }

    pub fn table<S: AsRef<str>>(entries: impl IntoIterator<Item = (S, S, f64)>) -> Result<Self, MetricError> {
        let mut map = HashMap::new();
        for (a, b, sim) in entries {
            if !(0.0..=1.0).contains(&sim) {
                return Err(MetricError::Table(format!("similarity {sim} outside [0, 1]")));
            }
            map.insert((label_key(a.as_ref()), label_key(b.as_ref())), sim);
        }
        Ok(Self { mode: EquivalenceMode::Table(map), threshold: EQUIVALENCE_THRESHOLD })
    }

    /// Reads a JSON array of `[a, b, similarity]` triples or
    /// `{"a", "b", "similarity"}` objects.
    pub fn from_file(path: &Path) -> Result<Self, MetricError> {
        let s = std::fs::read_to_string(path).map_err(|e| MetricError::Table(e.to_string()))?;
        let entries: Vec<TableEntry> =
            serde_json::from_str(&s).map_err(|e| MetricError::Table(e.to_string()))?;
        Self::table(entries.into_iter().map(|e| match e {
            TableEntry::Triple(a, b, s) | TableEntry::Object { a, b, similarity: s } => (a, b, s),
        }))
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    /// Symmetric similarity in `[0, 1]`.
    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        let (ka, kb) = (label_key(a), label_key(b));
        let exact = if ka == kb { 1.0 } else { 0.0 };
        match &self.mode {
            EquivalenceMode::Exact => exact,
            EquivalenceMode::Table(map) => map
                .get(&(ka.clone(), kb.clone()))
                .or_else(|| map.get(&(kb, ka)))
                .copied()
                .unwrap_or(exact),
        }
    }

    /// Strictly above the threshold.
    pub fn equivalent(&self, a: &str, b: &str) -> bool {
        self.similarity(a, b) > self.threshold
    }
}

impl Default for EquivalenceProvider {
    fn default() -> Self {
        Self::exact()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceHit {
    pub counterfactual: String,
    pub ground_truth: String,
    pub similarity: f64,
}

/// Outcome of the rank-1 rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub memorized: bool,
    /// Index of the winning ground truth `v*`.
    pub top_ground_truth: Option<usize>,
    /// Counterfactuals at rank 1 that matched a ground truth.
    pub equivalence_hits: Vec<EquivalenceHit>,
    /// Candidates treated as ground truths when measuring strength, and the
    /// one whose lead is measured. For an equivalence hit this is the
    /// rank-1 counterfactual itself.
    pub strength_set: Vec<usize>,
    pub strength_anchor: Option<usize>,
}

/// Memorized iff a ground truth holds rank 1, or the rank-1 candidate is a
/// counterfactual whose similarity to some ground truth exceeds the
/// threshold. In the latter case `v*` is the most similar ground truth.
pub fn decide_memorization(
    ranking: &Ranking,
    cands: &CandidateSet,
    eq: &EquivalenceProvider,
) -> Decision {
    let gts = cands.ground_truth_indices();
    let winner = ranking.ranks.iter().position(|&r| r == 1);
    let mut d = Decision {
        memorized: false,
        top_ground_truth: None,
        equivalence_hits: Vec::new(),
        strength_set: gts.clone(),
        strength_anchor: None,
    };
    let Some(w) = winner else {
        return d;
    };
    if cands.is_ground_truth(w) {
        d.memorized = true;
        d.top_ground_truth = Some(w);
        d.strength_anchor = Some(w);
        return d;
    }
    let cf = cands.label(w);
    let mut best: Option<(usize, f64)> = None;
    for &g in &gts {
        let sim = eq.similarity(cf, cands.label(g));
        if sim > eq.threshold {
            d.equivalence_hits.push(EquivalenceHit {
                counterfactual: cf.to_string(),
                ground_truth: cands.label(g).to_string(),
                similarity: sim,
            });
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((g, sim));
            }
        }
    }
    if let Some((g, _)) = best {
        d.memorized = true;
        d.top_ground_truth = Some(g);
        d.strength_set.push(w);
        d.strength_anchor = Some(w);
    }
    d
}

/// Memorization strength and its intermediate quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strength {
    /// `Δ*`: lead of `v*` over the best counterfactual.
    pub lead_margin: f64,
    /// `z* = (Δ* - μ) / σ`
    pub z: f64,
    pub mean: f64,
    pub std_dev: f64,
}

/// Standardized lead margin of `v_star` over the best candidate outside
/// `ground_truths`. Lead margins `Δ_i = s_i - max_{j≠i} s_j` are taken over
/// all candidates; `σ` is the population standard deviation.
pub fn strength(scores: &[f64], ground_truths: &[usize], v_star: usize) -> Result<Strength, MetricError> {
    let n = scores.len();
    if n < 3 {
        return Err(MetricError::TooFewCandidates(n));
    }
    if v_star >= n || !ground_truths.contains(&v_star) {
        return Err(MetricError::NotMemorized(v_star));
    }
    // largest and second-largest give max_{j != i} in one pass
    let (mut top, mut second, mut top_idx) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
    for (i, &s) in scores.iter().enumerate() {
        if s > top {
            second = top;
            top = s;
            top_idx = i;
        } else if s > second {
            second = s;
        }
    }
    let margins: Vec<f64> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| s - if i == top_idx { second } else { top })
        .collect();
    let mean = margins.iter().sum::<f64>() / n as f64;
    let var = margins.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
    let std_dev = var.sqrt();
    if std_dev == 0.0 {
        return Err(MetricError::DegenerateDistribution);
    }
    let best_cf = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| !ground_truths.contains(i))
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let lead_margin = scores[v_star] - best_cf;
    if !(lead_margin > 0.0) {
        return Err(MetricError::NotMemorized(v_star));
    }
    Ok(Strength { lead_margin, z: (lead_margin - mean) / std_dev, mean, std_dev })
}
