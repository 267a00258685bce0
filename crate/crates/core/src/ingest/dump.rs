use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use bzip2::read::MultiBzDecoder;
use flate2::read::MultiGzDecoder;
use serde::Deserialize;
use serde_json::Value;

use super::properties::{Datatype, PropertySpec};
use super::IngestError;
use crate::text::is_prefixed_id;

const READ_BUFFER: usize = 1 << 20;

/// Compression of a dump source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compression {
    Gzip,
    Bzip2,
    None,
}

impl Compression {
    /// Guesses from the file extension (`.gz`, `.bz2`, anything else plain).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("gz") => Compression::Gzip,
            Some("bz2") => Compression::Bzip2,
            _ => Compression::None,
        }
    }
}

/// A single value of a claim, normalized to text where possible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClaimValue {
    /// Entity reference, e.g. `Q5`.
    Entity(String),
    String(String),
    /// Decimal amount without unit conversion and without a leading `+`.
    Quantity(String),
    /// `YYYY-MM-DD`, `YYYY-MM` or `YYYY` depending on the stated precision.
    Time(String),
    /// `novalue`/`somevalue` snaks and value types we do not render. The
    /// payload names the shape.
    Unsupported(String),
}

impl ClaimValue {
    pub fn as_entity(&self) -> Option<&str> {
        match self {
            ClaimValue::Entity(id) => Some(id),
            _ => None,
        }
    }
}

/// An item from the dump.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EntityRecord {
    pub qid: String,
    pub labels: BTreeMap<String, String>,
    pub claims: BTreeMap<String, Vec<ClaimValue>>,
}

impl EntityRecord {
    pub fn english_label(&self) -> Option<&str> {
        self.labels.get("en").map(String::as_str)
    }
}

/// True iff some `P31` (instance of) claim references `Q5` (human).
pub fn is_human(e: &EntityRecord) -> bool {
    e.claims
        .get("P31")
        .is_some_and(|vals| vals.iter().any(|v| v.as_entity() == Some("Q5")))
}

#[derive(Deserialize)]
struct RawTerm {
    value: String,
}

#[derive(Deserialize)]
struct RawEntity {
    #[serde(rename = "type", default)]
    kind: Option<String>,
    id: String,
    #[serde(default)]
    labels: BTreeMap<String, RawTerm>,
    #[serde(default)]
    descriptions: BTreeMap<String, RawTerm>,
    #[serde(default)]
    aliases: BTreeMap<String, Vec<RawTerm>>,
    #[serde(default)]
    claims: BTreeMap<String, Vec<Value>>,
    #[serde(default)]
    datatype: Option<String>,
}

enum Parsed {
    Item(EntityRecord),
    Property(PropertySpec),
    Skipped,
}

fn parse_claim(statement: &Value) -> ClaimValue {
    let Some(snak) = statement.get("mainsnak") else {
        return ClaimValue::Unsupported("missing mainsnak".into());
    };
    match snak.get("snaktype").and_then(Value::as_str) {
        Some("value") => {}
        Some(other) => return ClaimValue::Unsupported(other.to_string()),
        None => return ClaimValue::Unsupported("missing snaktype".into()),
    }
    let Some(dv) = snak.get("datavalue") else {
        return ClaimValue::Unsupported("missing datavalue".into());
    };
    let value = dv.get("value");
    match (dv.get("type").and_then(Value::as_str), value) {
        (Some("wikibase-entityid"), Some(v)) => {
            if let Some(id) = v.get("id").and_then(Value::as_str) {
                ClaimValue::Entity(id.to_string())
            } else if let Some(n) = v.get("numeric-id").and_then(Value::as_u64) {
                let prefix = match v.get("entity-type").and_then(Value::as_str) {
                    Some("property") => 'P',
                    _ => 'Q',
                };
                ClaimValue::Entity(format!("{prefix}{n}"))
            } else {
                ClaimValue::Unsupported("wikibase-entityid without id".into())
            }
        }
        (Some("string"), Some(Value::String(s))) => ClaimValue::String(s.clone()),
        (Some("quantity"), Some(v)) => match v.get("amount").and_then(Value::as_str) {
            Some(amount) => ClaimValue::Quantity(normalize_amount(amount)),
            None => ClaimValue::Unsupported("quantity without amount".into()),
        },
        (Some("time"), Some(v)) => {
            let precision = v.get("precision").and_then(Value::as_u64).unwrap_or(11);
            match v.get("time").and_then(Value::as_str).and_then(|t| normalize_time(t, precision)) {
                Some(t) => ClaimValue::Time(t),
                None => ClaimValue::Unsupported("unparseable time".into()),
            }
        }
        (Some(other), _) => ClaimValue::Unsupported(other.to_string()),
        (None, _) => ClaimValue::Unsupported("untyped datavalue".into()),
    }
}

fn normalize_amount(amount: &str) -> String {
    amount.strip_prefix('+').unwrap_or(amount).to_string()
}

/// Truncates a Wikibase timestamp (`+1879-03-14T00:00:00Z`) at its precision:
/// 11 = day, 10 = month, anything coarser = year.
pub(crate) fn normalize_time(raw: &str, precision: u64) -> Option<String> {
    let (negative, rest) = match raw.as_bytes().first()? {
        b'+' => (false, &raw[1..]),
        b'-' => (true, &raw[1..]),
        _ => (false, raw),
    };
    let date = rest.split('T').next()?;
    let mut parts = date.split('-');
    let year: u64 = parts.next()?.parse().ok()?;
    let month: u32 = parts.next()?.parse().ok()?;
    let day: u32 = parts.next()?.parse().ok()?;
    let sign = if negative { "-" } else { "" };
    Some(match precision {
        p if p >= 11 && month > 0 && day > 0 => format!("{sign}{year:04}-{month:02}-{day:02}"),
        p if p >= 10 && month > 0 => format!("{sign}{year:04}-{month:02}"),
        _ => format!("{sign}{year:04}"),
    })
}

fn parse_line(line: &[u8]) -> Result<Parsed, String> {
    let raw: RawEntity = serde_json::from_slice(line).map_err(|e| e.to_string())?;
    let is_property = raw.kind.as_deref() == Some("property") || is_prefixed_id(&raw.id, 'P');
    if is_property {
        let Some(label) = raw.labels.get("en") else {
            return Ok(Parsed::Skipped);
        };
        let spec = PropertySpec {
            pid: raw.id,
            label: label.value.clone(),
            description: raw.descriptions.get("en").map(|d| d.value.clone()).unwrap_or_default(),
            aliases: raw
                .aliases
                .get("en")
                .map(|a| a.iter().map(|t| t.value.clone()).collect())
                .unwrap_or_default(),
            datatype: raw
                .datatype
                .as_deref()
                .unwrap_or("unknown")
                .parse::<Datatype>()
                .unwrap(),
        };
        spec.validate().map_err(|e| e.to_string())?;
        return Ok(Parsed::Property(spec));
    }
    if raw.kind.as_deref().is_some_and(|k| k != "item") {
        return Ok(Parsed::Skipped);
    }
    if !is_prefixed_id(&raw.id, 'Q') {
        return Err(format!("bad entity id {:?}", raw.id));
    }
    let mut claims = BTreeMap::new();
    for (pid, statements) in raw.claims {
        if !is_prefixed_id(&pid, 'P') {
            return Err(format!("bad claim key {pid:?}"));
        }
        claims.insert(pid, statements.iter().map(parse_claim).collect());
    }
    Ok(Parsed::Item(EntityRecord {
        qid: raw.id,
        labels: raw.labels.into_iter().map(|(lang, t)| (lang, t.value)).collect(),
        claims,
    }))
}

/// Counters describing a stream pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamStats {
    /// Non-structural lines seen (brackets and blank lines excluded).
    pub lines: u64,
    pub items: u64,
    pub properties: u64,
    /// Valid entities of other kinds (lexemes, properties without an English
    /// label).
    pub skipped: u64,
    pub malformed: u64,
}

impl StreamStats {
    pub fn malformed_fraction(&self) -> f64 {
        if self.lines == 0 {
            0.0
        } else {
            self.malformed as f64 / self.lines as f64
        }
    }
}

/// When to give up on a corrupt dump.
#[derive(Debug, Clone, Copy)]
pub struct CorruptionPolicy {
    pub max_malformed_fraction: f64,
    /// The fraction is only enforced once this many lines have been read, so
    /// tiny fixtures with a stray bad line still stream.
    pub min_lines: u64,
}

impl Default for CorruptionPolicy {
    fn default() -> Self {
        Self { max_malformed_fraction: 0.01, min_lines: 1000 }
    }
}

/// Streaming iterator over the items of a dump.
///
/// Property entities found along the way are collected into
/// [`EntityStream::property_catalog`] instead of being yielded.
pub struct EntityStream {
    reader: Box<dyn BufRead>,
    buf: Vec<u8>,
    stats: StreamStats,
    policy: CorruptionPolicy,
    catalog: Vec<PropertySpec>,
    done: bool,
}

impl EntityStream {
    pub fn stats(&self) -> StreamStats {
        self.stats
    }

    pub fn property_catalog(&self) -> &[PropertySpec] {
        &self.catalog
    }

    pub fn into_property_catalog(self) -> Vec<PropertySpec> {
        self.catalog
    }

    pub fn with_policy(mut self, policy: CorruptionPolicy) -> Self {
        self.policy = policy;
        self
    }

    fn corrupted(&self) -> bool {
        self.stats.lines >= self.policy.min_lines
            && self.stats.malformed_fraction() > self.policy.max_malformed_fraction
    }

    fn corruption_error(&self) -> IngestError {
        IngestError::Corrupt { malformed: self.stats.malformed, lines: self.stats.lines }
    }
}

impl Iterator for EntityStream {
    type Item = Result<EntityRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    return self.corrupted().then(|| Err(self.corruption_error()));
                }
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(IngestError::Io(e)));
                }
            }
            let line = trim_entity_line(&self.buf);
            if line.is_empty() || line == b"[" || line == b"]" {
                continue;
            }
            self.stats.lines += 1;
            match parse_line(line) {
                Ok(Parsed::Item(record)) => {
                    self.stats.items += 1;
                    return Some(Ok(record));
                }
                Ok(Parsed::Property(spec)) => {
                    self.stats.properties += 1;
                    self.catalog.push(spec);
                }
                Ok(Parsed::Skipped) => self.stats.skipped += 1,
                Err(msg) => {
                    self.stats.malformed += 1;
                    log::debug!("skipping malformed line {}: {msg}", self.stats.lines);
                    if self.corrupted() {
                        self.done = true;
                        return Some(Err(self.corruption_error()));
                    }
                }
            }
        }
    }
}

fn trim_entity_line(line: &[u8]) -> &[u8] {
    let line = line.trim_ascii();
    line.strip_suffix(b",").unwrap_or(line).trim_ascii_end()
}

/// Streams entities from a byte source. Accepts the canonical dump layout (a
/// JSON array with one entity per line, lines ending in `,`) as well as plain
/// JSONL.
pub fn stream_entities<R: Read + 'static>(source: R, compression: Compression) -> EntityStream {
    let reader: Box<dyn BufRead> = match compression {
        Compression::Gzip => {
            Box::new(BufReader::with_capacity(READ_BUFFER, MultiGzDecoder::new(source)))
        }
        Compression::Bzip2 => Box::new(BufReader::with_capacity(
            READ_BUFFER,
            MultiBzDecoder::new(BufReader::new(source)),
        )),
        Compression::None => Box::new(BufReader::with_capacity(READ_BUFFER, source)),
    };
    EntityStream {
        reader,
        buf: Vec::new(),
        stats: StreamStats::default(),
        policy: CorruptionPolicy::default(),
        catalog: Vec::new(),
        done: false,
    }
}

/// Opens a dump file, picking the decoder from its extension.
pub fn open_dump(path: &Path) -> Result<EntityStream, IngestError> {
    let file = File::open(path)?;
    Ok(stream_entities(file, Compression::from_path(path)))
}
