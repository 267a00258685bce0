//! Canary templates: sentences asserting a (subject, property, value) triple
//! with `HUMAN_SUBJECT` and `PROTECTED_VALUE` placeholders.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::ingest::PropertySpec;
use crate::text::normalize_whitespace;

pub const SUBJECT: &str = "HUMAN_SUBJECT";
pub const VALUE: &str = "PROTECTED_VALUE";
/// Stand-in for an unspecified person.
pub const GENERIC_SUBJECT: &str = "This person";
pub const MAX_PARAPHRASES: usize = 10;
pub const MAX_AUX_FACTS: usize = 4;

#[derive(Debug, Error)]
pub enum CanaryError {
    #[error("template {text:?}: {reason}")]
    Placeholder { text: String, reason: String },
    #[error("property label {0:?} already contains a placeholder")]
    LabelHasPlaceholder(String),
    #[error("no auxiliary facts available for contextualization")]
    NoAuxFacts,
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Grammatical frame of a baseline canary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    /// `h is <label> v.`
    Copular,
    /// `h's <label> is v.`
    Possessive,
    /// `h <label> v.`
    Transitive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    Baseline,
    Paraphrase,
    Contextualized,
}

/// A canary pattern. `PROTECTED_VALUE` occurs exactly once; `HUMAN_SUBJECT`
/// occurs exactly once unless the template has been rewritten to a generic
/// subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanaryTemplate {
    #[serde(skip)]
    pub pid: String,
    pub variant_id: u32,
    pub form: Form,
    pub kind: TemplateKind,
    pub text: String,
}

impl CanaryTemplate {
    pub fn new(
        pid: impl Into<String>,
        form: Form,
        kind: TemplateKind,
        variant_id: u32,
        text: impl Into<String>,
    ) -> Result<Self, CanaryError> {
        let t = Self { pid: pid.into(), variant_id, form, kind, text: text.into() };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), CanaryError> {
        let fail = |reason: String| CanaryError::Placeholder { text: self.text.clone(), reason };
        let values = self.text.matches(VALUE).count();
        if values != 1 {
            return Err(fail(format!("{VALUE} must occur exactly once, found {values}")));
        }
        let subjects = self.text.matches(SUBJECT).count();
        if subjects != 1 {
            return Err(fail(format!("{SUBJECT} must occur exactly once, found {subjects}")));
        }
        if self.kind == TemplateKind::Baseline && self.variant_id != 0 {
            return Err(fail("baseline templates have variant id 0".into()));
        }
        Ok(())
    }

    pub fn has_subject(&self) -> bool {
        self.text.contains(SUBJECT)
    }
}

impl fmt::Display for CanaryTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

const FINITE_VERBS: &[&str] = &[
    "applies", "attended", "believes", "competes", "drives", "follows", "had", "has", "holds",
    "lives", "owns", "participated", "performs", "plays", "practices", "replaces", "represents",
    "sings", "speaks", "studied", "supports", "takes", "uses", "wears", "won", "works", "writes",
];

const PARTICIPLES: &[&str] = &[
    "affiliated", "appointed", "associated", "awarded", "based", "beatified", "born", "buried",
    "canonized", "charged", "commemorated", "convicted", "depicted", "described", "detained",
    "diagnosed", "educated", "elected", "employed", "enrolled", "followed", "given", "held",
    "honored", "imprisoned", "influenced", "inspired", "interred", "involved", "killed", "known",
    "located", "made", "married", "named", "nominated", "owned", "preceded", "replaced",
    "represented", "sentenced", "shown", "signed", "sponsored", "taken", "used", "venerated", "worn",
    "written",
];

const PREPOSITIONS: &[&str] = &[
    "about", "after", "among", "as", "at", "before", "by", "during", "for", "from", "in", "into",
    "near", "of", "on", "to", "under", "with", "within",
];

/// Nouns that look like regular participles.
const NOT_PARTICIPLES: &[&str] = &["breed", "creed", "hundred", "speed", "seed", "need", "bed"];

/// Picks the grammatical frame for a property label from its first words:
/// a finite verb gives [`Form::Transitive`], a preposition or a past
/// participle heading a prepositional phrase gives [`Form::Copular`], anything
/// else (a noun phrase, including "given name") [`Form::Possessive`].
pub fn classify_form(property_label: &str) -> Form {
    let mut words = property_label
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '-').to_lowercase());
    let first = words.next().unwrap_or_default();
    let w = first.as_str();
    let participle = PARTICIPLES.contains(&w) || (w.len() > 4 && w.ends_with("ed") && !NOT_PARTICIPLES.contains(&w));
    if FINITE_VERBS.contains(&w) {
        Form::Transitive
    } else if PREPOSITIONS.contains(&w)
        || (participle && words.next().is_none_or(|next| next.split('/').any(|p| PREPOSITIONS.contains(&p))))
    {
        Form::Copular
    } else {
        Form::Possessive
    }
}

/// Renders the baseline canary for a property in the given frame. The label
/// is inserted verbatim, whitespace-normalized.
pub fn render_baseline(p: &PropertySpec, form: Form) -> Result<CanaryTemplate, CanaryError> {
    if p.label.contains(SUBJECT) || p.label.contains(VALUE) {
        return Err(CanaryError::LabelHasPlaceholder(p.label.clone()));
    }
    let label = normalize_whitespace(&p.label);
    let text = match form {
        Form::Copular => format!("{SUBJECT} is {label} {VALUE}."),
        Form::Possessive => format!("{SUBJECT}'s {label} is {VALUE}."),
        Form::Transitive => format!("{SUBJECT} {label} {VALUE}."),
    };
    CanaryTemplate::new(p.pid.clone(), form, TemplateKind::Baseline, 0, text)
}

/// Paraphrases read from a file, plus the entries that failed validation.
#[derive(Debug, Clone, Default)]
pub struct ParaphraseSet {
    pub templates: Vec<CanaryTemplate>,
    pub rejected: Vec<(usize, String)>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ParaphraseLine {
    Text(String),
    Object { text: String },
}

/// Reads paraphrase templates for one property. Each non-blank line is a JSON
/// string or an object with a `text` field. Accepted entries are numbered
/// 1..=10 in file order; invalid entries are reported with their line number.
pub fn load_paraphrases(
    reader: impl BufRead,
    pid: &str,
    form: Form,
) -> Result<ParaphraseSet, CanaryError> {
    let mut out = ParaphraseSet::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let text = match serde_json::from_str::<ParaphraseLine>(&line) {
            Ok(ParaphraseLine::Text(t)) | Ok(ParaphraseLine::Object { text: t }) => t,
            Err(e) => {
                out.rejected.push((lineno, format!("not a paraphrase entry: {e}")));
                continue;
            }
        };
        if out.templates.len() == MAX_PARAPHRASES {
            out.rejected.push((lineno, format!("more than {MAX_PARAPHRASES} paraphrases")));
            continue;
        }
        let id = out.templates.len() as u32 + 1;
        match CanaryTemplate::new(pid, form, TemplateKind::Paraphrase, id, text) {
            Ok(t) => out.templates.push(t),
            Err(e) => out.rejected.push((lineno, e.to_string())),
        }
    }
    Ok(out)
}

pub fn load_paraphrase_file(path: &Path, pid: &str, form: Form) -> Result<ParaphraseSet, CanaryError> {
    let f = std::fs::File::open(path)?;
    load_paraphrases(std::io::BufReader::new(f), pid, form)
}

/// Substitutes subject and value literally. A template without a subject
/// placeholder ignores `subject_text`.
pub fn instantiate(t: &CanaryTemplate, subject_text: &str, value_text: &str) -> String {
    let mut slots: Vec<(usize, usize, &str)> = Vec::with_capacity(2);
    if let Some(i) = t.text.find(SUBJECT) {
        slots.push((i, SUBJECT.len(), subject_text));
    }
    if let Some(i) = t.text.find(VALUE) {
        slots.push((i, VALUE.len(), value_text));
    }
    slots.sort_by_key(|s| s.0);
    let mut out = String::with_capacity(t.text.len() + subject_text.len() + value_text.len());
    let mut pos = 0;
    for (start, len, with) in slots {
        out.push_str(&t.text[pos..start]);
        out.push_str(with);
        pos = start + len;
    }
    out.push_str(&t.text[pos..]);
    out
}

fn at_sentence_start(prefix: &str) -> bool {
    let p = prefix.trim_end();
    p.is_empty() || p.ends_with(['.', '!', '?'])
}

fn capitalized(s: &str, cap: bool) -> String {
    if !cap {
        return s.to_string();
    }
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Replaces the subject with "This person", or "This person's" when the
/// subject is possessive. Lowercased mid-sentence.
pub fn generic_subject(t: &CanaryTemplate) -> CanaryTemplate {
    let Some(i) = t.text.find(SUBJECT) else {
        return t.clone();
    };
    let cap = at_sentence_start(&t.text[..i]);
    let base = if cap { GENERIC_SUBJECT.to_string() } else { GENERIC_SUBJECT.to_lowercase() };
    let mut out = t.clone();
    out.text = format!("{}{}{}", &t.text[..i], base, &t.text[i + SUBJECT.len()..]);
    out
}

/// Rewrites the subject of a frame as a pronoun referring back to an earlier
/// mention: "h's" → "Their", "h is" → "They are", "h holds" → "They hold",
/// "h" → "them".
fn pronominalize(text: &str) -> String {
    let Some(i) = text.find(SUBJECT) else {
        return text.to_string();
    };
    let before = &text[..i];
    let after = &text[i + SUBJECT.len()..];
    let cap = at_sentence_start(before);
    if let Some(rest) = after.strip_prefix("'s") {
        format!("{before}{}{rest}", capitalized("their", cap))
    } else if cap {
        match after.strip_prefix(' ').and_then(|a| a.split_once(' ')) {
            Some((verb, rest)) => format!("{before}They {} {rest}", plural_verb(verb)),
            None => format!("{before}They{after}"),
        }
    } else {
        format!("{before}them{after}")
    }
}

/// Third-person singular present to plural: "is" → "are", "holds" → "hold".
fn plural_verb(verb: &str) -> String {
    match verb {
        "is" => return "are".into(),
        "was" => return "were".into(),
        "has" => return "have".into(),
        "does" => return "do".into(),
        _ => {}
    }
    if let Some(stem) = verb.strip_suffix("ies") {
        return format!("{stem}y");
    }
    for suffix in ["ches", "shes", "sses", "xes", "zes", "oes"] {
        if verb.ends_with(suffix) {
            return verb[..verb.len() - 2].to_string();
        }
    }
    match verb.strip_suffix('s') {
        Some(stem) if !stem.ends_with('s') && !stem.is_empty() => stem.to_string(),
        _ => verb.to_string(),
    }
}

/// A fact about the subject used to contextualize canaries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuxFact {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pid: Option<String>,
    pub label: String,
    pub value: String,
}

impl AuxFact {
    pub fn new(label: impl Into<String>, value: impl Into<String>) -> Self {
        Self { pid: None, label: label.into(), value: value.into() }
    }

    pub fn with_pid(mut self, pid: impl Into<String>) -> Self {
        self.pid = Some(pid.into());
        self
    }
}

impl<'de> Deserialize<'de> for AuxFact {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Pair(String, String),
            Triple(String, String, String),
            Object { pid: Option<String>, label: String, value: String },
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Pair(label, value) => AuxFact { pid: None, label, value },
            Raw::Triple(pid, label, value) => AuxFact { pid: Some(pid), label, value },
            Raw::Object { pid, label, value } => AuxFact { pid, label, value },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cohort {
    WellKnown,
    LesserKnown,
}

impl Cohort {
    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::WellKnown => "well-known",
            Cohort::LesserKnown => "lesser-known",
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The audited person.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubjectProfile {
    pub name: String,
    /// Auxiliary facts in preference order (most frequent properties first).
    pub aux_facts: Vec<AuxFact>,
    pub web_presence: Option<f64>,
    pub cohort: Option<Cohort>,
}

impl SubjectProfile {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), ..Default::default() }
    }
}

/// Prepends up to `k` (at most four) auxiliary facts about the subject. The
/// first fact names the subject possessively, later ones start with "Their",
/// and the original frame follows with its subject turned into a pronoun.
/// Facts about the template's own property are skipped.
pub fn contextualize(
    t: &CanaryTemplate,
    s: &SubjectProfile,
    k: usize,
) -> Result<CanaryTemplate, CanaryError> {
    if k == 0 {
        return Ok(t.clone());
    }
    let facts: Vec<&AuxFact> = s
        .aux_facts
        .iter()
        .filter(|f| f.pid.as_deref() != Some(t.pid.as_str()))
        .filter(|f| {
            let joined = format!("{} {}", f.label, f.value);
            !joined.contains(SUBJECT) && !joined.contains(VALUE)
        })
        .take(k.min(MAX_AUX_FACTS))
        .collect();
    if facts.is_empty() {
        return Err(CanaryError::NoAuxFacts);
    }
    let mut sentences = Vec::with_capacity(facts.len() + 1);
    for (i, f) in facts.iter().enumerate() {
        let label = normalize_whitespace(&f.label);
        let value = normalize_whitespace(&f.value);
        if i == 0 {
            sentences.push(format!("{SUBJECT}'s {label} is {value}."));
        } else {
            sentences.push(format!("Their {label} is {value}."));
        }
    }
    sentences.push(pronominalize(&t.text));
    let mut out = t.clone();
    out.text = sentences.join(" ");
    out.kind = TemplateKind::Contextualized;
    out.validate()?;
    Ok(out)
}

/// Similar-looking variants of a name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameVariantSet {
    pub original: String,
    pub variants: Vec<String>,
    /// Every candidate variant coincided with the original.
    pub degenerate: bool,
}

fn reversed_token(token: &str) -> String {
    let rev: String = token.chars().rev().collect();
    let mut chars = rev.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars.flat_map(char::to_lowercase)).collect(),
        None => String::new(),
    }
}

/// Generates up to `k` name variants in a fixed order: first token reversed,
/// last token reversed, first and last tokens swapped, every token reversed.
/// Reversed tokens are capitalized. Variants equal to the original or to an
/// earlier variant are dropped.
pub fn similar_names(name: &str, k: usize) -> NameVariantSet {
    let tokens: Vec<&str> = name.split_whitespace().collect();
    let original = tokens.join(" ");
    let mut candidates = Vec::new();
    if let (Some(first), Some(last)) = (tokens.first(), tokens.last()) {
        let n = tokens.len();
        let with = |idx: usize, tok: String| {
            let mut t: Vec<String> = tokens.iter().map(|s| s.to_string()).collect();
            t[idx] = tok;
            t.join(" ")
        };
        candidates.push(with(0, reversed_token(first)));
        candidates.push(with(n - 1, reversed_token(last)));
        let mut swapped: Vec<&str> = tokens.clone();
        swapped.swap(0, n - 1);
        candidates.push(swapped.join(" "));
        candidates.push(tokens.iter().map(|t| reversed_token(t)).collect::<Vec<_>>().join(" "));
    }
    let mut variants: Vec<String> = Vec::new();
    for c in candidates {
        if c != original && !variants.contains(&c) {
            variants.push(c);
        }
    }
    let degenerate = variants.is_empty();
    variants.truncate(k);
    NameVariantSet { original, variants, degenerate }
}

/// Baseline plus any paraphrases for one property.
pub fn property_templates(
    p: &PropertySpec,
    paraphrases: Option<&Path>,
) -> Result<(Vec<CanaryTemplate>, Vec<(usize, String)>), CanaryError> {
    let form = classify_form(&p.label);
    let mut templates = vec![render_baseline(p, form)?];
    let mut rejected = Vec::new();
    if let Some(path) = paraphrases {
        let set = load_paraphrase_file(path, &p.pid, form)?;
        templates.extend(set.templates);
        rejected = set.rejected;
    }
    Ok((templates, rejected))
}

/// Writes `templates/<pid>.jsonl` lines.
pub fn write_templates(mut w: impl Write, templates: &[CanaryTemplate]) -> std::io::Result<()> {
    for t in templates {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_templates(reader: impl BufRead, pid: &str) -> Result<Vec<CanaryTemplate>, CanaryError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut t: CanaryTemplate = serde_json::from_str(&line)
            .map_err(|e| CanaryError::Format { line: i + 1, message: e.to_string() })?;
        t.pid = pid.to_string();
        t.validate().map_err(|e| CanaryError::Format { line: i + 1, message: e.to_string() })?;
        out.push(t);
    }
    Ok(out)
}

pub fn read_template_file(path: &Path) -> Result<Vec<CanaryTemplate>, CanaryError> {
    let pid = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    let f = std::fs::File::open(path)?;
    read_templates(std::io::BufReader::new(f), &pid)
}
