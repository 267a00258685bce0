//! Ingest gives the same outputs whatever the dump compression.

mod common;

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use memaudit::ingest::{run_ingest, IngestOptions};

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = vec![("properties.json".to_string(), fs::read(dir.join("properties.json")).unwrap())];
    let mut pairs: Vec<_> = fs::read_dir(dir.join("pairs")).unwrap().map(|e| e.unwrap().path()).collect();
    pairs.sort();
    for p in pairs {
        files.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
    }
    files
}

#[test]
fn plain_gzip_and_bzip2_dumps_agree() {
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("dump.json");
    io::copy(&mut common::SyntheticDump::new(7, 2_000), &mut fs::File::create(&plain).unwrap()).unwrap();
    let bytes = fs::read(&plain).unwrap();

    let gz = dir.path().join("dump.json.gz");
    let mut enc = flate2::write::GzEncoder::new(fs::File::create(&gz).unwrap(), flate2::Compression::fast());
    enc.write_all(&bytes).unwrap();
    enc.finish().unwrap();

    let bz = dir.path().join("dump.json.bz2");
    let mut enc = bzip2::write::BzEncoder::new(fs::File::create(&bz).unwrap(), bzip2::Compression::fast());
    enc.write_all(&bytes).unwrap();
    enc.finish().unwrap();

    let opts = IngestOptions { min_humans: 20, ..IngestOptions::default() };
    let mut outputs = Vec::new();
    for (name, dump) in [("plain", &plain), ("gz", &gz), ("bz2", &bz)] {
        let out = dir.path().join(name);
        let summary = run_ingest(dump, &out, &opts).unwrap();
        assert_eq!(summary.stats.malformed_fraction(), 0.0, "{name}");
        assert!(!summary.retained.is_empty(), "{name}");
        outputs.push(tree(&out));
    }
    assert!(outputs[0].len() > 1);
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn concatenated_gzip_members_are_read_through() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    io::copy(&mut common::SyntheticDump::new(3, 300), &mut bytes).unwrap();
    let (a, b) = bytes.split_at(bytes.len() / 2);
    let gz = dir.path().join("dump.json.gz");
    let mut file = fs::File::create(&gz).unwrap();
    for part in [a, b] {
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        enc.write_all(part).unwrap();
        file.write_all(&enc.finish().unwrap()).unwrap();
    }
    drop(file);
    let plain = dir.path().join("dump.json");
    fs::write(&plain, &bytes).unwrap();
    let opts = IngestOptions { min_humans: 5, ..IngestOptions::default() };
    run_ingest(&plain, &dir.path().join("p"), &opts).unwrap();
    run_ingest(&gz, &dir.path().join("g"), &opts).unwrap();
    assert_eq!(tree(&dir.path().join("p")), tree(&dir.path().join("g")));
}
