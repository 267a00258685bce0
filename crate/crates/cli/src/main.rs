use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use memaudit::canary::{property_templates, write_templates};
use memaudit::gateway::ProviderKind;
use memaudit::http::UreqTransport;
use memaudit::ingest::{read_properties, run_ingest, Datatype, IngestOptions, PairSample};
use memaudit::labels::{counterfactuals_from_json, counterfactuals_to_json, LabelSource};
use memaudit::pipeline::{load_template_dir, read_records, run_audit, RunPlan, DEFAULT_PIDS};
use memaudit::report::{
    emit_property_breakdown, emit_table, format_warnings, summaries_to_csv, summaries_to_json,
};
use memaudit::subjects::read_subjects;
use memaudit::{
    aggregate, sample_counterfactuals, AggregationMode, AuditConfig, EquivalenceProvider,
    LabelCache, LabelResolver, ProviderConfig,
};

const WIKIDATA_API: &str = "https://www.wikidata.org/w/api.php";

#[derive(Parser)]
#[command(name = "audit", version, about = "Person-fact memorization audits for causal language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Strict,
    Lenient,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Stream an entity dump into properties.json and pairs/<pid>.jsonl.
    Ingest {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        min_humans: u64,
        /// Comma-separated datatypes to keep.
        #[arg(long, value_delimiter = ',', default_value = "wikibase-item,string,quantity,time")]
        datatypes: Vec<String>,
        /// properties.json-style metadata for dumps without property entities.
        #[arg(long)]
        property_catalog: Option<PathBuf>,
    },
    /// Draw fixed counterfactual sets per property.
    SampleCfs {
        /// Directory of <pid>.jsonl pair files.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = WIKIDATA_API)]
        endpoint: String,
        /// Label cache file; defaults to labels_cache.json next to --out.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Resolve labels from the cache only.
        #[arg(long)]
        offline: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render baseline and paraphrase templates per property.
    BuildCanaries {
        #[arg(long)]
        properties: PathBuf,
        /// Directory of <pid>.jsonl paraphrase files.
        #[arg(long)]
        paraphrases: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every subject-property pair and write audit records.
    Run {
        #[arg(long)]
        subjects: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PIDS.map(String::from))]
        properties: Vec<String>,
        #[arg(long)]
        templates: PathBuf,
        #[arg(long)]
        cfs: PathBuf,
        /// http:<url> or mock:<path>.
        #[arg(long)]
        provider: String,
        /// Model id; defaults to the mock file stem.
        #[arg(long)]
        model: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 4)]
        name_variants: usize,
        /// Add a variant of each template with this many auxiliary facts.
        #[arg(long, default_value_t = 0)]
        contextualize: usize,
        /// Similarity table enabling the equivalence relaxation.
        #[arg(long)]
        equivalence: Option<PathBuf>,
        #[arg(long, default_value_t = 0.75)]
        equivalence_threshold: f64,
        #[arg(long)]
        dump_scores: bool,
        /// Persistent NLL cache (JSONL).
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        #[arg(long, default_value_t = 120)]
        timeout_secs: u64,
        /// Property metadata used to match auxiliary facts to properties.
        #[arg(long)]
        property_catalog: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate audit records into cohort summaries.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum, default_value = "strict")]
        mode: Mode,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest { dump, out, min_humans, datatypes, property_catalog } => {
            ingest(&dump, &out, min_humans, &datatypes, property_catalog.as_deref())
        }
        Command::SampleCfs { pairs, n, seed, endpoint, cache, offline, out } => {
            sample_cfs(&pairs, n, seed, &endpoint, cache, offline, &out)
        }
        Command::BuildCanaries { properties, paraphrases, out } => {
            build_canaries(&properties, paraphrases.as_deref(), &out)
        }
        Command::Run {
            subjects,
            properties,
            templates,
            cfs,
            provider,
            model,
            alpha,
            name_variants,
            contextualize,
            equivalence,
            equivalence_threshold,
            dump_scores,
            cache,
            concurrency,
            timeout_secs,
            property_catalog,
            out,
        } => {
            let kind: ProviderKind = provider.parse()?;
            let model = match (model, &kind) {
                (Some(m), _) => m,
                (None, ProviderKind::Mock(p)) => {
                    p.file_stem().and_then(|s| s.to_str()).unwrap_or("mock").to_string()
                }
                (None, ProviderKind::Http(_)) => bail!("--model is required for http providers"),
            };
            let mut pc = ProviderConfig::new(kind, model);
            pc.max_concurrency = concurrency;
            pc.timeout = Duration::from_secs(timeout_secs);
            pc.cache_path = cache;
            let equivalence = match equivalence {
                Some(p) => EquivalenceProvider::from_file(&p)?,
                None => EquivalenceProvider::exact(),
            }
            .with_threshold(equivalence_threshold);
            let cfg = AuditConfig { alpha, name_variants, equivalence, dump_scores };
            run(&subjects, properties, &templates, &cfs, &pc, &cfg, contextualize, property_catalog.as_deref(), &out)
        }
        Command::Report { records, mode, format, out } => report(&records, mode, format, &out),
    }
}

fn ingest(dump: &Path, out: &Path, min_humans: u64, datatypes: &[String], catalog: Option<&Path>) -> Result<()> {
    let datatypes = datatypes
        .iter()
        .map(|d| d.parse::<Datatype>().map_err(anyhow::Error::msg))
        .collect::<Result<Vec<_>>>()?;
    let extra_catalog = match catalog {
        Some(p) => read_properties(p)?,
        None => Vec::new(),
    };
    let opts = IngestOptions { min_humans, datatypes, extra_catalog, ..IngestOptions::default() };
    let summary = run_ingest(dump, out, &opts).with_context(|| format!("ingesting {}", dump.display()))?;
    log::info!(
        "{} lines, {} items, {} malformed; kept {} properties, wrote {} pair files",
        summary.stats.lines,
        summary.stats.items,
        summary.stats.malformed,
        summary.retained.len(),
        summary.pair_files.len()
    );
    Ok(())
}

fn pair_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

fn sample_cfs(
    pairs: &Path,
    n: usize,
    seed: u64,
    endpoint: &str,
    cache: Option<PathBuf>,
    offline: bool,
    out: &Path,
) -> Result<()> {
    let cache_path = cache.unwrap_or_else(|| {
        out.parent().unwrap_or_else(|| Path::new(".")).join("labels_cache.json")
    });
    let cache = LabelCache::open(&cache_path)?;
    let resolver = if offline {
        LabelResolver::offline(cache)
    } else {
        LabelResolver::new(endpoint, Arc::new(UreqTransport::default()), cache)
    };
    let mut sets = Vec::new();
    for file in pair_files(pairs)? {
        let sample = PairSample::read_file(&file)?;
        let set = sample_counterfactuals(&sample, n, seed, &resolver as &dyn LabelSource);
        // keep whatever was resolved even if a later property fails
        resolver.save_cache()?;
        let set = set.with_context(|| format!("sampling {}", sample.pid))?;
        if set.undersized {
            log::warn!("{}: only {} of {n} counterfactuals available", set.pid, set.value_cfs.len());
        }
        sets.push(set);
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, counterfactuals_to_json(&sets))?;
    log::info!("{} properties, {} label requests", sets.len(), resolver.http_calls());
    Ok(())
}

fn build_canaries(properties: &Path, paraphrases: Option<&Path>, out: &Path) -> Result<()> {
    let props = read_properties(properties)?;
    fs::create_dir_all(out)?;
    for p in &props {
        let para = paraphrases.map(|d| d.join(format!("{}.jsonl", p.pid))).filter(|f| f.exists());
        let (templates, rejected) = property_templates(p, para.as_deref())?;
        for (line, reason) in rejected {
            log::warn!("{} paraphrase line {line}: {reason}", p.pid);
        }
        let f = fs::File::create(out.join(format!("{}.jsonl", p.pid)))?;
        write_templates(BufWriter::new(f), &templates)?;
    }
    log::info!("wrote templates for {} properties", props.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    subjects: &Path,
    pids: Vec<String>,
    templates: &Path,
    cfs: &Path,
    provider: &ProviderConfig,
    cfg: &AuditConfig,
    contextualize: usize,
    catalog: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let subjects = read_subjects(subjects).with_context(|| format!("reading {}", subjects.display()))?;
    let counterfactuals: BTreeMap<_, _> = counterfactuals_from_json(&fs::read_to_string(cfs)?)?
        .into_iter()
        .map(|s| (s.pid.clone(), s))
        .collect();
    let templates = load_template_dir(templates, &pids)?;
    let catalog = match catalog {
        Some(p) => read_properties(p)?,
        None => Vec::new(),
    };
    let plan = RunPlan { subjects, pids, templates, counterfactuals, contextualize, catalog };
    let scorer = provider.build()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(out)?);
    let outcome = run_audit(&plan, &scorer, cfg, Some(&mut w))?;
    for s in &outcome.skipped {
        log::warn!("skipped {s}");
    }
    let unscored = outcome.records.iter().filter(|r| r.unscored).count();
    log::info!(
        "{} records ({unscored} unscored), {} upstream scoring calls",
        outcome.records.len(),
        scorer.upstream_calls()
    );
    Ok(())
}

fn report(records: &Path, mode: Mode, format: Format, out: &Path) -> Result<()> {
    let records = read_records(records)?;
    let mode = match mode {
        Mode::Strict => AggregationMode::Strict,
        Mode::Lenient => AggregationMode::Lenient,
    };
    let agg = aggregate(&records, mode);
    eprint!("{}", format_warnings(&agg.warnings));
    fs::create_dir_all(out)?;
    let (name, body) = match format {
        Format::Table => ("summary.txt", emit_table(&agg.summaries)),
        Format::Csv => ("summary.csv", summaries_to_csv(&agg.summaries)?),
        Format::Json => ("summary.json", summaries_to_json(&agg.summaries)),
    };
    fs::write(out.join(name), &body)?;
    fs::write(out.join("property_breakdown.csv"), emit_property_breakdown(&records)?)?;
    if matches!(format, Format::Table) {
        print!("{body}");
    }
    Ok(())
}
