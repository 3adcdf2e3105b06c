use std::fs;
use std::path::Path;

use codofuzz::dataio::{build_seed_set, load_suite, save_suite, SuiteManifest};
use codofuzz::desk;
use codofuzz::evaluation::{emit_report, histograms, NamedMetrics, SuiteMetrics};
use codofuzz::fuzzer::{run_fuzz, seed_set_rng, FuzzRun};
use codofuzz::{predict, Error, FuzzConfig};

fn desk_run(iterations: u64) -> (FuzzConfig, FuzzRun) {
    let model = desk::shipped_model();
    let data = desk::shipped_blobs().generate().unwrap();
    let cfg = FuzzConfig {
        max_iterations: iterations,
        seeds_per_class: 10,
        ..desk::shipped_fuzz_config()
    };
    let seeds = build_seed_set(&data, &model, cfg.seeds_per_class, &mut seed_set_rng(7))
        .unwrap()
        .seeds;
    let run = run_fuzz(cfg.clone(), seeds, &model).unwrap();
    (cfg, run)
}

fn save(dir: &Path, cfg: &FuzzConfig, run: &FuzzRun) -> SuiteManifest {
    save_suite(
        dir,
        &run.suite,
        Some(cfg),
        Some(&run.report),
        "builtin:desk",
    )
    .unwrap()
}

#[test]
fn round_trip_preserves_the_suite_exactly() {
    let (cfg, run) = desk_run(400);
    assert!(!run.suite.inputs.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let manifest = save(dir.path(), &cfg, &run);
    let loaded = load_suite(dir.path()).unwrap();
    assert_eq!(loaded.suite, run.suite);
    assert_eq!(loaded.manifest, manifest);
    assert_eq!(loaded.manifest.config.as_ref(), Some(&cfg));
    assert_eq!(manifest.counts.inputs, run.suite.inputs.len());
    for name in [
        "suite.jsonl",
        "seeds.jsonl",
        "coverage.json",
        "report.json",
        "trace.csv",
    ] {
        assert!(manifest.digests.contains_key(name), "{name} missing");
    }
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 400);
}

#[test]
fn saving_twice_is_byte_identical() {
    let (cfg, run) = desk_run(200);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    save(a.path(), &cfg, &run);
    save(b.path(), &cfg, &run);
    let manifest: SuiteManifest =
        serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    for rel in manifest
        .digests
        .keys()
        .filter(|r| !r.ends_with("report.json"))
    {
        assert_eq!(
            fs::read(a.path().join(rel)).unwrap(),
            fs::read(b.path().join(rel)).unwrap(),
            "{rel}"
        );
    }
}

#[test]
fn tampering_is_detected() {
    let (cfg, run) = desk_run(300);
    let dir = tempfile::tempdir().unwrap();
    let manifest = save(dir.path(), &cfg, &run);

    let image = manifest
        .digests
        .keys()
        .find(|k| k.starts_with("images/"))
        .unwrap()
        .clone();
    let path = dir.path().join(&image);
    let original = fs::read(&path).unwrap();
    let mut bytes = original.clone();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        load_suite(dir.path()),
        Err(Error::Corruption { .. })
    ));
    fs::write(&path, &original).unwrap();
    assert!(load_suite(dir.path()).is_ok());

    let jsonl = dir.path().join("suite.jsonl");
    let text = fs::read_to_string(&jsonl).unwrap();
    fs::write(
        &jsonl,
        text.replacen("\"ground_truth\":", "\"ground_truth\": ", 1),
    )
    .unwrap();
    match load_suite(dir.path()) {
        Err(Error::Corruption { path, .. }) => assert!(path.ends_with("suite.jsonl")),
        other => panic!("expected corruption, got {:?}", other.err()),
    }
    fs::write(&jsonl, text).unwrap();

    fs::remove_file(dir.path().join("coverage.json")).unwrap();
    assert!(matches!(load_suite(dir.path()), Err(Error::Io { .. })));
}

#[test]
fn lineages_replay_to_the_stored_images_and_predictions() {
    let (cfg, run) = desk_run(600);
    let dir = tempfile::tempdir().unwrap();
    save(dir.path(), &cfg, &run);
    let loaded = load_suite(dir.path()).unwrap().suite;
    let mutator = cfg.mutator().unwrap();
    let model = desk::shipped_model();
    for input in &loaded.inputs {
        let image = loaded.replay(input, &mutator).unwrap();
        assert_eq!(image, input.image, "input {}", input.id);
        assert_eq!(
            &predict(&model, &image).unwrap(),
            input.prediction.as_ref().unwrap()
        );
        assert!(input.lineage.iter().filter(|r| r.is_affine).count() <= 1);
        assert_eq!(
            input.lineage.last().unwrap().parent_id,
            input.parent_id().unwrap()
        );
    }
}

#[test]
fn report_files_agree_with_the_metrics() {
    let (_, run) = desk_run(500);
    let (_, other) = desk_run(100);
    let out = tempfile::tempdir().unwrap();
    let named = emit_report(
        &[
            ("a".to_string(), &run.suite),
            ("b".to_string(), &other.suite),
        ],
        out.path(),
    )
    .unwrap();
    let parsed: Vec<NamedMetrics> =
        serde_json::from_slice(&fs::read(out.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(parsed, named);
    assert_eq!(
        parsed[0].metrics,
        SuiteMetrics::of_suite(&run.suite).unwrap()
    );
    let csv_text = fs::read_to_string(out.path().join("metrics.csv")).unwrap();
    assert_eq!(csv_text.lines().count(), 1 + 2);

    let mis = run
        .suite
        .inputs
        .iter()
        .filter(|i| i.is_misclassified() == Some(true))
        .count();
    let ok = run.suite.inputs.len() - mis;
    let h = histograms(&run.suite).unwrap();
    for hist in [&h.confidence, &h.classes, &h.cells] {
        assert_eq!(hist.iter().map(|x| x[0]).sum::<usize>(), ok);
        assert_eq!(hist.iter().map(|x| x[1]).sum::<usize>(), mis);
    }
    let mut reader = csv::Reader::from_path(out.path().join("a_confidence_hist.csv")).unwrap();
    let (mut c, mut e) = (0, 0);
    for rec in reader.records() {
        let rec = rec.unwrap();
        c += rec[2].parse::<usize>().unwrap();
        e += rec[3].parse::<usize>().unwrap();
    }
    assert_eq!((c, e), (ok, mis));
}
