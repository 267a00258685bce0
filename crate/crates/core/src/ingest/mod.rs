//! Streaming ingestion of Wikidata-style entity dumps.
//!
//! A dump is read twice: the first pass gathers the property catalog and
//! counts distinct humans per property, the second collects `(human, value)`
//! pairs for the entity-valued properties that survived the frequency filter.

mod dump;
mod properties;
mod usage;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use dump::{
    is_human, open_dump, stream_entities, ClaimValue, Compression, CorruptionPolicy,
    EntityRecord, EntityStream, StreamStats,
};
pub use properties::{
    filter_properties, filter_properties_by, properties_from_json, properties_to_json,
    read_properties, Datatype, PropertySpec,
};
pub use usage::{
    collect_pairs, count_usage, threshold, Pair, PairCollector, PairSample, PropertyUsage,
    UsageCounter,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dump looks corrupt: {malformed} of {lines} lines malformed")]
    Corrupt { malformed: u64, lines: u64 },
    #[error("invalid property: {0}")]
    InvalidProperty(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Settings for [`run_ingest`].
#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub min_humans: u64,
    pub datatypes: Vec<Datatype>,
    /// Extra property metadata for dumps that do not contain property entities.
    pub extra_catalog: Vec<PropertySpec>,
    pub corruption: CorruptionPolicy,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            min_humans: 100,
            datatypes: Datatype::PROMPTABLE.to_vec(),
            extra_catalog: Vec::new(),
            corruption: CorruptionPolicy::default(),
        }
    }
}

/// What an ingest run produced.
#[derive(Debug, Clone)]
pub struct IngestSummary {
    pub stats: StreamStats,
    pub usage: Vec<PropertyUsage>,
    pub retained: Vec<PropertySpec>,
    pub pair_files: Vec<PathBuf>,
    pub skipped_claims: u64,
}

/// Runs the full ingest over a dump file and writes `properties.json` and
/// `pairs/<pid>.jsonl` under `out_dir`.
pub fn run_ingest(dump: &Path, out_dir: &Path, opts: &IngestOptions) -> Result<IngestSummary, IngestError> {
    // pass 1: catalog + usage over every property seen on a human
    let mut stream = open_dump(dump)?.with_policy(opts.corruption);
    let mut counter = UsageCounter::all();
    for record in stream.by_ref() {
        counter.observe(&record?);
    }
    let stats = stream.stats();
    let mut catalog = stream.into_property_catalog();
    let known: BTreeSet<String> = catalog.iter().map(|p| p.pid.clone()).collect();
    catalog.extend(opts.extra_catalog.iter().filter(|p| !known.contains(&p.pid)).cloned());

    let promptable = filter_properties_by(&catalog, &opts.datatypes);
    let usage: Vec<PropertyUsage> = counter
        .usage()
        .into_iter()
        .filter(|u| promptable.iter().any(|p| p.pid == u.pid))
        .collect();
    let kept: BTreeSet<String> = threshold(&usage, opts.min_humans).into_iter().collect();
    let retained: Vec<PropertySpec> =
        promptable.into_iter().filter(|p| kept.contains(&p.pid)).collect();

    fs::create_dir_all(out_dir.join("pairs"))?;
    fs::write(out_dir.join("properties.json"), properties_to_json(&retained))?;

    // pass 2: pairs for entity-valued properties
    let item_pids: Vec<&str> = retained
        .iter()
        .filter(|p| p.datatype == Datatype::WikibaseItem)
        .map(|p| p.pid.as_str())
        .collect();
    let mut collector = PairCollector::new(item_pids);
    let mut stream = open_dump(dump)?.with_policy(opts.corruption);
    for record in stream.by_ref() {
        collector.observe(&record?);
    }
    let mut pair_files = Vec::new();
    let mut skipped_claims = 0;
    for sample in collector.finish() {
        let path = out_dir.join("pairs").join(format!("{}.jsonl", sample.pid));
        let mut w = std::io::BufWriter::new(fs::File::create(&path)?);
        sample.write_jsonl(&mut w)?;
        skipped_claims += sample.skipped_claims;
        if sample.skipped_claims > 0 {
            log::warn!("{}: {} non-entity claims skipped", sample.pid, sample.skipped_claims);
        }
        pair_files.push(path);
    }
    if stats.malformed > 0 {
        log::warn!("{} malformed lines skipped", stats.malformed);
    }
    Ok(IngestSummary { stats, usage, retained, pair_files, skipped_claims })
}
