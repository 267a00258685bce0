//! Aggregation of audit records into cohort summaries and per-property
//! breakdowns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::AuditRecord;
use crate::canary::{Cohort, TemplateKind};
use crate::subjects::SubjectEntry;
use crate::text::id_number;

pub const SCHEMA_VERSION: u32 = 1;
/// Cohort label for records without one.
pub const UNASSIGNED: &str = "unassigned";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema version {0}")]
    Schema(u32),
}

/// How template outcomes combine into a property-level verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    /// Memorized only if every template variant succeeds.
    Strict,
    /// Memorized if any template variant succeeds.
    Lenient,
}

impl std::str::FromStr for AggregationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(Self::Strict),
            "lenient" => Ok(Self::Lenient),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Summary of one (model, cohort).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub model: String,
    pub cohort: String,
    pub mode: AggregationMode,
    /// Headline rate `M̄` (%). Strict: mean per-pair template success
    /// percentage. Lenient: percentage of pairs with any successful template.
    pub mean_rate: Option<f64>,
    /// Mean over pairs of the percentage of templates at rank 1.
    pub rate_mean_pct: Option<f64>,
    /// Percentage of pairs memorized under the mode's all/any rule.
    pub rate_all_or_nothing_pct: Option<f64>,
    /// Mean `z*` over memorized records.
    pub mean_strength: Option<f64>,
    /// Subjects with no memorized property under the mode.
    pub zero_subjects: usize,
    pub cohort_size: usize,
    pub pairs: usize,
    pub excluded_records: usize,
}

#[derive(Debug, Clone, Default)]
struct Cell {
    scored: usize,
    memorized: usize,
    unscored: usize,
}

type CellKey = (String, String, String, String); // model, cohort, subject, pid

/// Summaries plus completeness warnings.
#[derive(Debug, Clone, Default)]
pub struct Aggregate {
    pub summaries: Vec<CohortSummary>,
    pub warnings: Vec<String>,
}

fn cohort_name(c: Option<Cohort>) -> String {
    c.map_or_else(|| UNASSIGNED.to_string(), |c| c.as_str().to_string())
}

fn mean(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    // sorted summation keeps the result independent of record order
    values.sort_by(f64::total_cmp);
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// Aggregates records per (model, cohort). Unscored records are excluded
/// and reported through warnings.
pub fn aggregate(records: &[AuditRecord], mode: AggregationMode) -> Aggregate {
    let mut cells: BTreeMap<CellKey, Cell> = BTreeMap::new();
    let mut strengths: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in records {
        let cohort = cohort_name(r.cohort);
        let cell = cells
            .entry((r.model.clone(), cohort.clone(), r.subject.clone(), r.pid.clone()))
            .or_default();
        if r.unscored {
            cell.unscored += 1;
            continue;
        }
        cell.scored += 1;
        if r.memorized {
            cell.memorized += 1;
            if let Some(z) = r.strength {
                strengths.entry((r.model.clone(), cohort)).or_default().push(z);
            }
        }
    }

    let mut warnings = Vec::new();
    let mut expected: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for ((model, _, _, pid), c) in &cells {
        let e = expected.entry((model, pid)).or_default();
        *e = (*e).max(c.scored + c.unscored);
    }
    for ((model, cohort, subject, pid), c) in &cells {
        let want = expected[&(model.as_str(), pid.as_str())];
        if c.scored < want {
            warnings.push(format!(
                "{model}/{cohort}: {subject} {pid} has {} of {want} templates scored",
                c.scored
            ));
        }
    }

    #[derive(Default)]
    struct Acc {
        pair_pct: Vec<f64>,
        template_pct: Vec<f64>,
        all_or_nothing: Vec<f64>,
        subjects: BTreeMap<String, bool>,
        excluded: usize,
    }
    let mut groups: BTreeMap<(String, String), Acc> = BTreeMap::new();
    for ((model, cohort, subject, _), c) in &cells {
        let acc = groups.entry((model.clone(), cohort.clone())).or_default();
        acc.excluded += c.unscored;
        if c.scored == 0 {
            continue;
        }
        let share = 100.0 * c.memorized as f64 / c.scored as f64;
        let verdict = match mode {
            AggregationMode::Strict => c.memorized == c.scored,
            AggregationMode::Lenient => c.memorized > 0,
        };
        let verdict_pct = if verdict { 100.0 } else { 0.0 };
        acc.template_pct.push(share);
        acc.all_or_nothing.push(verdict_pct);
        acc.pair_pct.push(match mode {
            AggregationMode::Strict => share,
            AggregationMode::Lenient => verdict_pct,
        });
        *acc.subjects.entry(subject.clone()).or_default() |= verdict;
    }

    let summaries = groups
        .into_iter()
        .map(|((model, cohort), mut acc)| {
            let mean_strength = strengths.get_mut(&(model.clone(), cohort.clone())).and_then(|v| mean(v));
            CohortSummary {
                mean_rate: mean(&mut acc.pair_pct),
                rate_mean_pct: mean(&mut acc.template_pct),
                rate_all_or_nothing_pct: mean(&mut acc.all_or_nothing),
                mean_strength,
                zero_subjects: acc.subjects.values().filter(|m| !**m).count(),
                cohort_size: acc.subjects.len(),
                pairs: acc.pair_pct.len(),
                excluded_records: acc.excluded,
                model,
                cohort,
                mode,
            }
        })
        .collect();
    Aggregate { summaries, warnings }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

pub const TABLE_HEADER: &str = "model | cohort | M̄(%) | z̄* | H_{M=0}/N";

/// One table row, e.g. `LLaMA 3.1-8B | well-known | 38.84 | 3.38 | 1/100`.
pub fn table_row(s: &CohortSummary) -> String {
    let zero = if s.cohort_size == 0 {
        "n/a".to_string()
    } else {
        format!("{}/{}", s.zero_subjects, s.cohort_size)
    };
    format!("{} | {} | {} | {} | {}", s.model, s.cohort, cell(s.mean_rate), cell(s.mean_strength), zero)
}

/// Plain-text table with a footer stating how `M̄` was computed.
pub fn emit_table(summaries: &[CohortSummary]) -> String {
    let mut out = String::new();
    out.push_str(TABLE_HEADER);
    out.push('\n');
    if summaries.is_empty() {
        out.push_str("n/a | n/a | n/a | n/a | n/a\n");
    }
    for s in summaries {
        out.push_str(&table_row(s));
        out.push('\n');
    }
    let mode = summaries.first().map(|s| s.mode);
    out.push('\n');
    match mode {
        Some(AggregationMode::Lenient) => out.push_str(
            "M̄: percentage of subject-property pairs with at least one template at rank 1 (lenient).\n",
        ),
        _ => out.push_str(
            "M̄: mean over subject-property pairs of the percentage of templates at rank 1 (strict); \
             H_{M=0}: subjects with no property memorized under every template.\n",
        ),
    }
    out.push_str("z̄*: mean memorization strength over memorized records.\n");
    out
}

pub fn summaries_to_csv(summaries: &[CohortSummary]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in summaries {
        w.serialize(s)?;
    }
    if summaries.is_empty() {
        w.write_record([
            "model", "cohort", "mode", "mean_rate", "rate_mean_pct", "rate_all_or_nothing_pct",
            "mean_strength", "zero_subjects", "cohort_size", "pairs", "excluded_records",
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("CSV is UTF-8"))
}

pub fn summaries_from_csv(csv_text: &str) -> Result<Vec<CohortSummary>, ReportError> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    r.deserialize().map(|row| row.map_err(ReportError::from)).collect()
}

#[derive(Serialize, Deserialize)]
struct SummaryFile {
    schema_version: u32,
    summaries: Vec<CohortSummary>,
}

pub fn summaries_to_json(summaries: &[CohortSummary]) -> String {
    let mut s = serde_json::to_string_pretty(&SummaryFile {
        schema_version: SCHEMA_VERSION,
        summaries: summaries.to_vec(),
    })
    .expect("summaries serialize");
    s.push('\n');
    s
}

pub fn summaries_from_json(json: &str) -> Result<Vec<CohortSummary>, ReportError> {
    let f: SummaryFile = serde_json::from_str(json)?;
    if f.schema_version != SCHEMA_VERSION {
        return Err(ReportError::Schema(f.schema_version));
    }
    Ok(f.summaries)
}

/// Memorization rate of one template variant of one property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub model: String,
    pub pid: String,
    pub kind: TemplateKind,
    pub variant_id: u32,
    pub subjects: usize,
    pub memorized: usize,
    pub rate_pct: f64,
}

/// Per (model, property, template variant) rates over scored records.
pub fn property_breakdown(records: &[AuditRecord]) -> Vec<BreakdownRow> {
    let mut acc: BTreeMap<(String, u64, String, TemplateKind, u32), (BTreeSet<String>, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.unscored) {
        let e = acc
            .entry((r.model.clone(), id_number(&r.pid), r.pid.clone(), r.kind, r.variant_id))
            .or_default();
        e.0.insert(r.subject.clone());
        if r.memorized {
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|((model, _, pid, kind, variant_id), (subjects, memorized))| BreakdownRow {
            model,
            pid,
            kind,
            variant_id,
            subjects: subjects.len(),
            memorized,
            rate_pct: 100.0 * memorized as f64 / subjects.len() as f64,
        })
        .collect()
}

/// Plot-ready CSV of [`property_breakdown`].
pub fn emit_property_breakdown(records: &[AuditRecord]) -> Result<String, ReportError> {
    let rows = property_breakdown(records);
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["model", "pid", "kind", "variant_id", "subjects", "memorized", "rate_pct"])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("CSV is UTF-8"))
}

/// Web-presence composite and cohort per subject. Subjects missing a signal
/// get neither.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortAssignment {
    pub composite: Vec<Option<f64>>,
    pub cohorts: Vec<Option<Cohort>>,
    pub excluded: Vec<String>,
}

/// Splits subjects into well-known (top half by composite) and lesser-known.
/// The composite is the geometric mean of the min-max normalized page views,
/// article length and language-edition count. Ties are ordered by name.
pub fn cohort_split(subjects: &[SubjectEntry]) -> CohortAssignment {
    let signals: Vec<Option<[f64; 3]>> = subjects
        .iter()
        .map(|s| match (s.pageviews, s.article_bytes, s.sitelinks) {
            (Some(a), Some(b), Some(c)) if a.is_finite() && b.is_finite() && c.is_finite() => Some([a, b, c]),
            _ => None,
        })
        .collect();
    let excluded: Vec<String> = subjects
        .iter()
        .zip(&signals)
        .filter(|(_, s)| s.is_none())
        .map(|(s, _)| s.name.clone())
        .collect();
    for name in &excluded {
        log::warn!("{name}: missing web-presence signal, excluded from cohort split");
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for s in signals.iter().flatten() {
        for k in 0..3 {
            lo[k] = lo[k].min(s[k]);
            hi[k] = hi[k].max(s[k]);
        }
    }
    let composite: Vec<Option<f64>> = signals
        .iter()
        .map(|s| {
            s.map(|s| {
                let product: f64 = (0..3)
                    .map(|k| if hi[k] > lo[k] { (s[k] - lo[k]) / (hi[k] - lo[k]) } else { 0.0 })
                    .product();
                product.cbrt()
            })
        })
        .collect();
    let mut ranked: Vec<usize> = (0..subjects.len()).filter(|&i| composite[i].is_some()).collect();
    ranked.sort_by(|&a, &b| {
        composite[b]
            .unwrap()
            .total_cmp(&composite[a].unwrap())
            .then_with(|| subjects[a].name.cmp(&subjects[b].name))
    });
    let top = ranked.len().div_ceil(2);
    let mut cohorts = vec![None; subjects.len()];
    for (pos, &i) in ranked.iter().enumerate() {
        cohorts[i] = Some(if pos < top { Cohort::WellKnown } else { Cohort::LesserKnown });
    }
    CohortAssignment { composite, cohorts, excluded }
}

/// Draws `per_cohort` subjects from each cohort with a seeded shuffle.
/// Returns subject indices, well-known first.
pub fn sample_cohorts(assignment: &CohortAssignment, per_cohort: usize, seed: u64) -> Vec<usize> {
    let mut out = Vec::new();
    for cohort in [Cohort::WellKnown, Cohort::LesserKnown] {
        let members: Vec<usize> = (0..assignment.cohorts.len())
            .filter(|&i| assignment.cohorts[i] == Some(cohort))
            .collect();
        let order = crate::labels::shuffled_indices(members.len(), seed);
        let mut picked: Vec<usize> = order.into_iter().take(per_cohort).map(|k| members[k]).collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    out
}

/// Human-readable completeness notes, one per line.
pub fn format_warnings(warnings: &[String]) -> String {
    let mut s = String::new();
    for w in warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}
