use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use memaudit::audit::plan_texts;
use memaudit::canary::read_template_file;
use memaudit::labels::counterfactuals_from_json;
use memaudit::{CandidateSet, Cohort, SubjectProfile};
use serde_json::json;

fn audit(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_audit")).args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "audit {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn item(id: &str, label: &str, claims: &[(&str, &str)]) -> String {
    let mut map = serde_json::Map::new();
    for (pid, value) in claims {
        let stmt = json!({"mainsnak": {"snaktype": "value", "property": pid,
            "datavalue": {"type": "wikibase-entityid", "value": {"id": value}}}, "rank": "normal"});
        map.entry(pid.to_string()).or_insert_with(|| json!([])).as_array_mut().unwrap().push(stmt);
    }
    json!({"type": "item", "id": id, "labels": {"en": {"language": "en", "value": label}}, "claims": map})
        .to_string()
}

const OCCUPATIONS: [&str; 8] =
    ["glassblower", "cartographer", "luthier", "ferrier", "archivist", "chandler", "cooper", "tanner"];

fn write_dump(path: &Path) {
    let mut lines = vec!["[".to_string()];
    lines.push(
        json!({"type": "property", "id": "P106", "datatype": "wikibase-item",
            "labels": {"en": {"language": "en", "value": "occupation"}}})
        .to_string()
            + ",",
    );
    for i in 0..8 {
        let occ = format!("Q{}", 900 + i);
        lines.push(item(&format!("Q{}", 100 + i), &format!("Person {i}"), &[("P31", "Q5"), ("P106", &occ)]) + ",");
    }
    // not human: ignored
    lines.push(item("Q1", "Earth", &[("P106", "Q900")]));
    lines.push("]".to_string());
    fs::write(path, lines.join("\n")).unwrap();
}

fn write_label_cache(path: &Path) {
    let entries: BTreeMap<String, serde_json::Value> = OCCUPATIONS
        .iter()
        .enumerate()
        .map(|(i, l)| (format!("Q{}", 900 + i), json!({"label": l, "fetched_at": 0})))
        .collect();
    fs::write(path, serde_json::to_string(&entries).unwrap()).unwrap();
}

fn write_subjects(path: &Path) {
    let subjects = json!([
        {"name": "Ada Quill", "qid": "Q100", "pageviews": 900, "article_bytes": 9000, "sitelinks": 40,
         "ground_truths": {"P106": ["glassblower"]}},
        {"name": "Bo Vance", "qid": "Q101", "pageviews": 10, "article_bytes": 800, "sitelinks": 2,
         "ground_truths": {"P106": ["cartographer"]}}
    ]);
    fs::write(path, subjects.to_string()).unwrap();
}

#[test]
fn full_pipeline_on_mock_provider() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();

    write_dump(&dir.path().join("dump.json"));
    audit(&["ingest", "--dump", &d("dump.json"), "--out", &d("ingest"), "--min-humans", "5"]);
    let props = fs::read_to_string(dir.path().join("ingest/properties.json")).unwrap();
    assert!(props.contains("\"P106\""));
    assert!(dir.path().join("ingest/pairs/P106.jsonl").exists());

    write_label_cache(&dir.path().join("labels.json"));
    let sample = [
        "sample-cfs", "--pairs", &d("ingest/pairs"), "--n", "5", "--seed", "7", "--offline",
        "--cache", &d("labels.json"), "--out", &d("cfs.json"),
    ];
    audit(&sample);
    let first = fs::read(dir.path().join("cfs.json")).unwrap();
    audit(&sample);
    assert_eq!(first, fs::read(dir.path().join("cfs.json")).unwrap(), "seeded sampling is reproducible");

    audit(&["build-canaries", "--properties", &d("ingest/properties.json"), "--out", &d("templates")]);
    let templates = read_template_file(&dir.path().join("templates/P106.jsonl")).unwrap();
    assert_eq!(templates[0].text, "HUMAN_SUBJECT's occupation is PROTECTED_VALUE.");

    // Ada's true occupation is cheap under her own name only
    write_subjects(&dir.path().join("subjects.json"));
    let cfs = counterfactuals_from_json(&fs::read_to_string(dir.path().join("cfs.json")).unwrap()).unwrap();
    let mut table: HashMap<String, Vec<f64>> = HashMap::new();
    for (name, gt) in [("Ada Quill", "glassblower"), ("Bo Vance", "cartographer")] {
        let cands = CandidateSet::from_overlapping("P106", &[gt.to_string()], &cfs[0].value_cfs).unwrap();
        let mut profile = SubjectProfile::new(name);
        profile.cohort = Some(Cohort::WellKnown);
        for text in plan_texts(&profile, &templates, &cands, 4) {
            let cheap = text == "Ada Quill's occupation is glassblower.";
            table.insert(text, vec![1.0, if cheap { 1.0 } else { 5.0 }]);
        }
    }
    fs::write(dir.path().join("toy-lm.json"), serde_json::to_string(&table).unwrap()).unwrap();

    audit(&[
        "run", "--subjects", &d("subjects.json"), "--properties", "P106", "--templates", &d("templates"),
        "--cfs", &d("cfs.json"), "--provider", &format!("mock:{}", d("toy-lm.json")), "--dump-scores",
        "--out", &d("records.jsonl"),
    ]);
    let records = fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = records.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    let ada = records.iter().find(|r| r["subject"] == "Ada Quill").unwrap();
    assert_eq!(ada["memorized"], true);
    assert_eq!(ada["cohort"], "well-known");
    assert!(ada["scores"].as_array().unwrap().len() >= 5);
    let bo = records.iter().find(|r| r["subject"] == "Bo Vance").unwrap();
    assert_eq!(bo["memorized"], false);
    assert_eq!(bo["cohort"], "lesser-known");

    let out = audit(&["report", "--records", &d("records.jsonl"), "--out", &d("report")]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("toy-lm | well-known | 100.00 |"), "{table}");
    assert!(table.contains("toy-lm | lesser-known | 0.00 | n/a | 1/1"), "{table}");
    assert!(dir.path().join("report/property_breakdown.csv").exists());

    audit(&["report", "--records", &d("records.jsonl"), "--mode", "lenient", "--format", "json", "--out", &d("report")]);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report/summary.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["summaries"][0]["mode"], "lenient");
}

#[test]
fn http_provider_requires_model() {
    let out = Command::new(env!("CARGO_BIN_EXE_audit"))
        .args(["run", "--subjects", "s.json", "--templates", "t", "--cfs", "c.json", "--provider", "http:http://localhost:1", "--out", "r.jsonl"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model"));
}

#[test]
fn rejects_unknown_provider_scheme() {
    let out = Command::new(env!("CARGO_BIN_EXE_audit"))
        .args(["run", "--subjects", "s.json", "--templates", "t", "--cfs", "c.json", "--provider", "ftp:x", "--out", "r.jsonl"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
