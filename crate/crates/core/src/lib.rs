//! Auditing toolkit for person-fact memorization in causal language models.
//!
//! The pipeline runs in stages, each backed by a module here:
//!
//! - [`ingest`] streams a Wikidata-style entity dump, discovers properties used
//!   on humans and collects `(human, value)` pairs per property.
//! - [`labels`] resolves entity ids to English labels and samples the fixed
//!   counterfactual sets.
//! - [`canary`] turns properties into canary templates (baseline frames,
//!   paraphrases, contextualized variants, generic subjects, name variants).
//! - [`gateway`] scores texts with a causal LM behind a uniform NLL protocol.
//! - [`metric`] and [`audit`] compute calibrated candidate scores, the rank-1
//!   memorization decision and memorization strength.
//! - [`report`] aggregates audit records into cohort summaries.

pub mod audit;
pub mod canary;
pub mod gateway;
pub mod http;
pub mod ingest;
pub mod labels;
pub mod metric;
pub mod pipeline;
pub mod report;
mod retry;
pub mod subjects;
pub mod text;

pub use audit::{audit_pair, AuditConfig, AuditRecord, CandidateDump};
pub use canary::{
    classify_form, contextualize, generic_subject, instantiate, load_paraphrases,
    render_baseline, similar_names, AuxFact, CanaryTemplate, Cohort, Form, NameVariantSet,
    SubjectProfile, TemplateKind,
};
pub use gateway::{NllBackend, NllResult, ProviderConfig, ProviderError, Scorer};
pub use ingest::{
    collect_pairs, count_usage, filter_properties, is_human, stream_entities, ClaimValue,
    Compression, Datatype, EntityRecord, PairSample, PropertySpec, PropertyUsage,
};
pub use labels::{sample_counterfactuals, CounterfactualSet, LabelCache, LabelResolver};
pub use metric::{
    calibrated_score, decide_memorization, rank_candidates, strength, CandidateNlls,
    CandidateSet, Decision, EquivalenceHit, EquivalenceProvider, Ranking, ScoreMatrix,
};
pub use pipeline::{run_audit, RunPlan};
pub use report::{aggregate, cohort_split, AggregationMode, CohortSummary};
pub use retry::RetryPolicy;
pub use subjects::SubjectEntry;
