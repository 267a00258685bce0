//! Per subject–property audits: instantiate every candidate under every
//! template for the subject, the generic subject and each name variant, score
//! the texts, and apply the memorization rule per template.

use serde::{Deserialize, Serialize};

use crate::canary::{generic_subject, instantiate, similar_names, CanaryTemplate, Cohort, SubjectProfile, TemplateKind};
use crate::gateway::{NllResult, ProviderError, Scorer};
use crate::metric::{
    decide_memorization, rank_candidates, strength, CandidateNlls, CandidateSet, EquivalenceHit,
    EquivalenceProvider, MetricError, ScoreMatrix,
};

#[derive(Debug, Clone)]
pub struct AuditConfig {
    pub alpha: f64,
    /// Size of the similar-name set `S(h)`.
    pub name_variants: usize,
    pub equivalence: EquivalenceProvider,
    /// Attach per-candidate scores to each record.
    pub dump_scores: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self { alpha: 1.0, name_variants: 4, equivalence: EquivalenceProvider::exact(), dump_scores: false }
    }
}

/// Raw per-candidate numbers behind a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDump {
    pub label: String,
    pub ground_truth: bool,
    pub s: f64,
    pub rank: usize,
    pub nll_subject: f64,
    pub nll_generic: f64,
    pub nll_variants: Vec<f64>,
    pub tokens: usize,
}

/// Outcome of one template for one subject–property pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub model: String,
    pub subject: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort: Option<Cohort>,
    pub pid: String,
    pub variant_id: u32,
    pub kind: TemplateKind,
    pub memorized: bool,
    pub top_ground_truth: Option<String>,
    pub lead_margin: Option<f64>,
    pub strength: Option<f64>,
    #[serde(default)]
    pub equivalence_hits: Vec<EquivalenceHit>,
    /// Scoring failed; the record carries no decision.
    #[serde(default)]
    pub unscored: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Candidates whose subject canary is over twice or under half the median
    /// token count.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub length_outliers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<CandidateDump>>,
}

impl AuditRecord {
    fn blank(model: &str, subject: &SubjectProfile, pid: &str, t: &CanaryTemplate) -> Self {
        Self {
            model: model.to_string(),
            subject: subject.name.clone(),
            cohort: subject.cohort,
            pid: pid.to_string(),
            variant_id: t.variant_id,
            kind: t.kind,
            memorized: false,
            top_ground_truth: None,
            lead_margin: None,
            strength: None,
            equivalence_hits: Vec::new(),
            unscored: false,
            error: None,
            length_outliers: Vec::new(),
            scores: None,
        }
    }

    /// Sort key that makes record files independent of scheduling.
    pub fn order_key(&self) -> (String, String, u32, TemplateKind, String) {
        (self.subject.clone(), self.pid.clone(), self.variant_id, self.kind, self.model.clone())
    }
}

/// Texts for one template, laid out candidate-major: for each candidate the
/// subject canary, the generic canary, then one canary per name variant.
pub fn template_texts(
    t: &CanaryTemplate,
    subject: &str,
    variants: &[String],
    cands: &CandidateSet,
) -> Vec<String> {
    let generic = generic_subject(t);
    let mut out = Vec::with_capacity(cands.len() * (2 + variants.len()));
    for v in cands.candidates() {
        out.push(instantiate(t, subject, v));
        out.push(instantiate(&generic, "", v));
        for h in variants {
            out.push(instantiate(t, h, v));
        }
    }
    out
}

/// Every text an audit of these templates scores, in scoring order. Its
/// length is `templates × candidates × (2 + variants)`.
pub fn plan_texts(
    subject: &SubjectProfile,
    templates: &[CanaryTemplate],
    cands: &CandidateSet,
    name_variants: usize,
) -> Vec<String> {
    let variants = similar_names(&subject.name, name_variants).variants;
    templates.iter().flat_map(|t| template_texts(t, &subject.name, &variants, cands)).collect()
}

fn length_outliers(cands: &CandidateSet, token_counts: &[usize]) -> Vec<String> {
    let mut sorted = token_counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    if n == 0 {
        return Vec::new();
    }
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    token_counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c as f64 > 2.0 * median || (c as f64) < median / 2.0)
        .map(|(i, _)| cands.label(i).to_string())
        .collect()
}

fn score_template(
    rec: &mut AuditRecord,
    results: &[NllResult],
    width: usize,
    cands: &CandidateSet,
    cfg: &AuditConfig,
) -> Result<(), MetricError> {
    let rows: Vec<CandidateNlls> = results
        .chunks(width)
        .map(|c| CandidateNlls {
            subject: c[0].total_nll,
            generic: c[1].total_nll,
            variants: c[2..].iter().map(|r| r.total_nll).collect(),
        })
        .collect();
    let token_counts: Vec<usize> = results.chunks(width).map(|c| c[0].token_count()).collect();
    let matrix = ScoreMatrix::new(rows, cfg.alpha)?;
    let scores = matrix.scores()?;
    let ranking = rank_candidates(&scores);
    let decision = decide_memorization(&ranking, cands, &cfg.equivalence);

    rec.memorized = decision.memorized;
    rec.top_ground_truth = decision.top_ground_truth.map(|g| cands.label(g).to_string());
    rec.equivalence_hits = decision.equivalence_hits.clone();
    if let Some(anchor) = decision.strength_anchor {
        match strength(&scores, &decision.strength_set, anchor) {
            Ok(s) => {
                rec.lead_margin = Some(s.lead_margin);
                rec.strength = Some(s.z);
            }
            Err(e) => log::debug!("{} {} v{}: no strength ({e})", rec.subject, rec.pid, rec.variant_id),
        }
    }
    rec.length_outliers = length_outliers(cands, &token_counts);
    if cfg.dump_scores {
        rec.scores = Some(
            matrix
                .rows
                .iter()
                .enumerate()
                .map(|(i, row)| CandidateDump {
                    label: cands.label(i).to_string(),
                    ground_truth: cands.is_ground_truth(i),
                    s: scores[i],
                    rank: ranking.ranks[i],
                    nll_subject: row.subject,
                    nll_generic: row.generic,
                    nll_variants: row.variants.clone(),
                    tokens: token_counts[i],
                })
                .collect(),
        );
    }
    Ok(())
}

/// Audits one subject–property pair under each template. Scoring failures
/// mark the affected records `unscored` instead of aborting.
pub fn audit_pair(
    subject: &SubjectProfile,
    pid: &str,
    templates: &[CanaryTemplate],
    cands: &CandidateSet,
    scorer: &Scorer,
    cfg: &AuditConfig,
) -> Vec<AuditRecord> {
    let variants = similar_names(&subject.name, cfg.name_variants).variants;
    let width = 2 + variants.len();
    let per_template = cands.len() * width;
    let texts: Vec<String> = templates
        .iter()
        .flat_map(|t| template_texts(t, &subject.name, &variants, cands))
        .collect();
    let results = scorer.batch_score(&texts);

    let mut records: Vec<AuditRecord> = templates
        .iter()
        .zip(results.chunks(per_template.max(1)))
        .map(|(t, chunk)| {
            let mut rec = AuditRecord::blank(scorer.model_id(), subject, pid, t);
            let scored: Result<Vec<NllResult>, ProviderError> = chunk.iter().cloned().collect();
            match scored {
                Ok(results) => {
                    if let Err(e) = score_template(&mut rec, &results, width, cands, cfg) {
                        rec.unscored = true;
                        rec.error = Some(e.to_string());
                    }
                }
                Err(e) => {
                    rec.unscored = true;
                    rec.error = Some(e.to_string());
                }
            }
            rec
        })
        .collect();
    records.sort_by_key(AuditRecord::order_key);
    records
}
