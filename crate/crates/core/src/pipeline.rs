//! End-to-end audit over a subject list: cohort assignment, candidate sets,
//! template expansion and per-pair scoring.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::audit::{audit_pair, AuditConfig, AuditRecord};
use crate::canary::{contextualize, read_template_file, CanaryError, CanaryTemplate};
use crate::gateway::Scorer;
use crate::ingest::PropertySpec;
use crate::labels::CounterfactualSet;
use crate::metric::CandidateSet;
use crate::report::cohort_split;
use crate::subjects::SubjectEntry;

/// Properties audited when none are named.
pub const DEFAULT_PIDS: [&str; 5] = ["P106", "P1412", "P19", "P21", "P27"];

/// Everything an audit run needs besides the scorer.
#[derive(Debug, Clone, Default)]
pub struct RunPlan {
    pub subjects: Vec<SubjectEntry>,
    pub pids: Vec<String>,
    pub templates: BTreeMap<String, Vec<CanaryTemplate>>,
    pub counterfactuals: BTreeMap<String, CounterfactualSet>,
    /// Auxiliary facts per contextualized variant; 0 disables them.
    pub contextualize: usize,
    /// Used to attach property ids to auxiliary facts.
    pub catalog: Vec<PropertySpec>,
}

/// Records plus the pairs that could not be audited and why.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub records: Vec<AuditRecord>,
    pub skipped: Vec<String>,
}

/// Reads `<dir>/<pid>.jsonl` for each pid.
pub fn load_template_dir(
    dir: &Path,
    pids: &[String],
) -> Result<BTreeMap<String, Vec<CanaryTemplate>>, CanaryError> {
    pids.iter()
        .map(|pid| Ok((pid.clone(), read_template_file(&dir.join(format!("{pid}.jsonl")))?)))
        .collect()
}

/// Templates for one subject: the stored ones, then one contextualized
/// variant of each when requested and the subject has usable facts.
fn subject_templates(base: &[CanaryTemplate], subject: &crate::canary::SubjectProfile, k: usize) -> Vec<CanaryTemplate> {
    let mut out = base.to_vec();
    if k > 0 {
        out.extend(base.iter().filter_map(|t| contextualize(t, subject, k).ok()));
    }
    out
}

/// Audits every (subject, pid) pair that has ground truths, templates and
/// counterfactuals. Subjects without a fixed cohort are assigned one from
/// their web-presence signals. Records are streamed to `sink` as each pair
/// finishes, when given.
pub fn run_audit(
    plan: &RunPlan,
    scorer: &Scorer,
    cfg: &AuditConfig,
    mut sink: Option<&mut dyn Write>,
) -> std::io::Result<RunOutcome> {
    let split = cohort_split(&plan.subjects);
    let mut out = RunOutcome::default();
    for (i, entry) in plan.subjects.iter().enumerate() {
        let profile = entry.profile(&plan.catalog, split.cohorts[i], split.composite[i]);
        for pid in &plan.pids {
            let Some(gts) = entry.ground_truths.get(pid).filter(|g| !g.is_empty()) else {
                out.skipped.push(format!("{} {pid}: no ground truth", entry.name));
                continue;
            };
            let Some(templates) = plan.templates.get(pid) else {
                out.skipped.push(format!("{} {pid}: no templates", entry.name));
                continue;
            };
            let Some(cfs) = plan.counterfactuals.get(pid) else {
                out.skipped.push(format!("{} {pid}: no counterfactuals", entry.name));
                continue;
            };
            let cands = match CandidateSet::from_overlapping(pid.as_str(), gts, &cfs.value_cfs) {
                Ok(c) => c,
                Err(e) => {
                    out.skipped.push(format!("{} {pid}: {e}", entry.name));
                    continue;
                }
            };
            let templates = subject_templates(templates, &profile, plan.contextualize);
            let records = audit_pair(&profile, pid, &templates, &cands, scorer, cfg);
            if let Some(w) = sink.as_deref_mut() {
                for r in &records {
                    serde_json::to_writer(&mut *w, r)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
            }
            out.records.extend(records);
        }
    }
    Ok(out)
}

/// Reads a records JSONL file.
pub fn read_records(path: &Path) -> std::io::Result<Vec<AuditRecord>> {
    let s = std::fs::read_to_string(path)?;
    s.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("record {}: {e}", i + 1))
            })
        })
        .collect()
}
