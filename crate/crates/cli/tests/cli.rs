mod common;

use std::fs;
use std::process::Command;

use common::{fixture_pipeline, fixture_str, run, to_tsv, toy_pairs};
use normlex_core::eval::REPORT_HEADER;

fn args<'a>(head: &[&'a str], pipeline: &'a [String], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter()
        .copied()
        .chain(pipeline.iter().map(String::as_str))
        .chain(tail.iter().copied())
        .collect()
}

#[test]
fn help_and_version_exit_zero() {
    let out = run(&["--help"], "");
    assert_eq!(out.code, 0);
    assert!(out.stdout.contains("normalize"));
    assert_eq!(run(&["--version"], "").code, 0);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["frobnicate"], "").code, 2);
    let p = fixture_pipeline();
    assert_eq!(run(&args(&["normalize", "--lang", "xx"], &p, &["toux"]), "").code, 2);
    assert_eq!(
        run(&args(&["normalize", "--lang", "fr", "--max-level", "None"], &p, &["toux"]), "").code,
        2
    );
    let lex = fixture_str("lexicon.tsv");
    let out = run(
        &["normalize", "--lexicon", &lex, "--lang", "fr", "--translator", "neural", "toux"],
        "",
    );
    assert_eq!(out.code, 2, "{}", out.stderr);
}

#[test]
fn runtime_errors_exit_one() {
    let out = run(&["translate", "--model", "/nonexistent/model.bin", "toux"], "");
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("/nonexistent/model.bin"));
    let out = run(&["normalize", "--lexicon", "/nonexistent/lex.tsv", "--lang", "fr", "toux"], "");
    assert_eq!(out.code, 1);
}

#[test]
fn normalize_keeps_input_order_and_reports_levels() {
    let p = fixture_pipeline();
    let out = run(
        &args(&["normalize", "--lang", "fr"], &p, &[]),
        "oreillons\ntoux\nmigraine\nxylophone\n",
    );
    assert_eq!(out.code, 0, "{}", out.stderr);
    let lines: Vec<Vec<&str>> = out.stdout.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(lines[0], ["term", "level", "matched", "candidates", "cui"]);
    let rows: Vec<(&str, &str, &str)> = lines[1..].iter().map(|r| (r[0], r[1], r[4])).collect();
    assert_eq!(
        rows,
        [
            ("oreillons", "BTM", "C0000021"),
            ("toux", "ML", "C0000004"),
            ("migraine", "CL", "C0000011"),
            ("xylophone", "None", ""),
        ]
    );
    let out = run(&args(&["normalize", "--lang", "fr", "--max-level", "ML"], &p, &["oreillons"]), "");
    assert!(out.stdout.lines().nth(1).unwrap().starts_with("oreillons\tNone"));
}

#[test]
fn malformed_annotation_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path();
    fs::write(corpus.join("manifest.tsv"), "bad\tMEDLINE\tfr\n").unwrap();
    fs::write(corpus.join("bad.txt"), "Une toux.").unwrap();
    fs::write(
        corpus.join("bad.ann"),
        "T1\tDISO 4 8\ttoux\nN1\tReference T1 CUI:C0000004\nT2\tDISO 0 3\tzzz\n",
    )
    .unwrap();
    let p = fixture_pipeline();
    let c = corpus.display().to_string();
    let out = run(&args(&["evaluate"], &p, &["--corpus", &c]), "");
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("bad.ann:3"), "{}", out.stderr);
}

#[test]
fn evaluate_writes_one_row_per_method_and_subcorpus() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.tsv");
    let r = report.display().to_string();
    let corpus = fixture_str("corpus");
    let p = fixture_pipeline();
    let out = run(&args(&["evaluate"], &p, &["--corpus", &corpus, "--out", &r]), "");
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(out.stdout.contains("MEDLINE"));
    let tsv = fs::read_to_string(&report).unwrap();
    let mut lines = tsv.lines();
    assert_eq!(lines.next(), Some(REPORT_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 6);
    for sub in ["EMEA", "MEDLINE"] {
        let recalls: Vec<f64> = rows.iter().filter(|r| r[1] == sub).map(|r| r[3].parse().unwrap()).collect();
        assert_eq!(recalls.len(), 3);
        assert!(recalls.windows(2).all(|w| w[0] <= w[1]), "{recalls:?}");
    }
}

#[test]
fn train_then_translate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("pairs.tsv");
    fs::write(&data, to_tsv(&toy_pairs(24, 2))).unwrap();
    let model = dir.path().join("m.nlmt");
    let (d, m) = (data.display().to_string(), model.display().to_string());
    let out = run(
        &[
            "train-mt",
            "--train",
            &d,
            "--out",
            &m,
            "--preset",
            "toy",
            "--epochs",
            "2",
            "--batch-size",
            "8",
        ],
        "",
    );
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(out.stdout.starts_with("best_epoch\t"));
    let log = fs::read_to_string(format!("{m}.log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let out = run(&["translate", "--model", &m], "kalite\nmorose\n");
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert_eq!(out.stdout.lines().count(), 2);

    let out = run(&["train-mt", "--train", &d, "--out", &m, "--dev-fraction", "1.5"], "");
    assert_eq!(out.code, 2);
}

#[test]
fn build_index_uses_cache_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_normlex");
    let status = Command::new(bin)
        .args(["build-index", "--lexicon", &fixture_str("lexicon.tsv")])
        .env_remove("NORMLEX_CACHE_DIR")
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));

    let out = Command::new(bin)
        .args(["build-index", "--lexicon", &fixture_str("lexicon.tsv")])
        .env("NORMLEX_CACHE_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("en\t50\t50\t50"), "{stdout}");
    assert!(dir.path().join("fr.nlx").is_file());

    // The cached indexes are picked up by later commands.
    let out = Command::new(bin)
        .args(["normalize", "--lexicon", &fixture_str("lexicon.tsv"), "--lang", "fr", "grippe"])
        .env("NORMLEX_CACHE_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("grippe\tML\tgrippe\tC0000001\tC0000001"));
}
